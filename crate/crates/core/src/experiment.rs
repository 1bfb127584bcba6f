//! Experiment-level models: triplet polarization per orientation, echo-detected
//! field sweeps, a reduced integrated-solid-effect (ISE) transfer model and
//! buildup fits.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Matrix4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analytics::{AxisKind, Spectrum, UniformAxis};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::hamiltonian::{static_hamiltonian, FieldContext, HamiltonianError, SwTransform};
use crate::oracle::{exact_transitions, neumaier_sum, OracleError};
use crate::spin::{eig_adiabatic, real, EigenSystem, Label, Operator3, SpinError, TimeTrace};
use crate::zfs::{state_rotation, zero_field_states_pas, Orientation, PowderGrid, ZfsTensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("populations must be non-negative and sum to 1, got {0:?}")]
    Populations([f64; 3]),
    #[error("invalid ISE configuration: {0}")]
    IseConfig(String),
    #[error("sweep under-resolved: detuning changes by {phase:.3} rad per step (limit {limit})")]
    SweepTooFast { phase: f64, limit: f64 },
    #[error("excitation bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("fit needs at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("ratios must be positive: {0:?}")]
    Ratio([f64; 3]),
    #[error("empty powder grid")]
    EmptyGrid,
}

/// Populations of the three labelled high-field levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelPopulations {
    pub plus: f64,
    pub zero: f64,
    pub minus: f64,
}

impl LevelPopulations {
    /// p₊₁ − p₋₁ across the overtone pair.
    pub fn polarization(&self) -> f64 {
        self.plus - self.minus
    }

    /// (p₊₁ − p₋₁)/(p₊₁ + p₋₁); zero when the pair is empty.
    pub fn normalized_polarization(&self) -> f64 {
        let s = self.plus + self.minus;
        if s > 0.0 {
            (self.plus - self.minus) / s
        } else {
            0.0
        }
    }

    pub fn get(&self, l: Label) -> f64 {
        match l {
            Label::Plus => self.plus,
            Label::Zero => self.zero,
            Label::Minus => self.minus,
        }
    }
}

/// Triplet sublevel populations in the molecular (ZFS principal-axis) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TripletPopulations {
    /// Zero-field states T_x, T_y, T_z.
    ZeroField { x: f64, y: f64, z: f64 },
    /// m_S states quantised along the molecular z axis.
    Ms(LevelPopulations),
}

impl TripletPopulations {
    pub fn zero_field(x: f64, y: f64, z: f64) -> Result<Self, ExperimentError> {
        check_populations([x, y, z]).map(|[x, y, z]| Self::ZeroField { x, y, z })
    }

    pub fn ms(zero: f64, plus: f64, minus: f64) -> Result<Self, ExperimentError> {
        check_populations([zero, plus, minus]).map(|[zero, plus, minus]| Self::Ms(LevelPopulations { plus, zero, minus }))
    }

    /// Intersystem-crossing populations of photoexcited pentacene.
    pub fn pentacene() -> Self {
        Self::ZeroField { x: 0.76, y: 0.16, z: 0.08 }
    }

    /// Optically pumped NV: m_S = 0 holds 0.48, the rest split equally over ±1.
    pub fn nv() -> Self {
        Self::Ms(LevelPopulations { plus: 0.26, zero: 0.48, minus: 0.26 })
    }

    pub fn uniform() -> Self {
        let t = 1.0 / 3.0;
        Self::ZeroField { x: t, y: t, z: t }
    }

    /// Density matrix in the molecular-frame Zeeman basis.
    fn density_pas(&self) -> Operator3 {
        match *self {
            Self::ZeroField { x, y, z } => {
                let t = zero_field_states_pas();
                [x, y, z].iter().zip(&t).fold(Operator3::zeros(), |acc, (p, v)| acc + v * v.adjoint() * real(*p))
            }
            Self::Ms(p) => Operator3::from_diagonal(&nalgebra::Vector3::new(real(p.plus), real(p.zero), real(p.minus))),
        }
    }
}

fn check_populations(v: [f64; 3]) -> Result<[f64; 3], ExperimentError> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(ExperimentError::Populations(v));
    }
    Ok(v.map(|p| p / sum))
}

/// Sudden projection of molecular-frame populations onto labelled eigenstates.
pub fn populations_from_eigensystem(eig: &EigenSystem, o: &Orientation, pops: &TripletPopulations) -> LevelPopulations {
    let u = state_rotation(o);
    let rho = u * pops.density_pas() * u.adjoint();
    let p = |l: Label| {
        let v = eig.state(l);
        v.dotc(&(rho * v)).re
    };
    LevelPopulations { plus: p(Label::Plus), zero: p(Label::Zero), minus: p(Label::Minus) }
}

pub fn eigenstate_populations(
    ctx: &FieldContext,
    zfs: &ZfsTensor,
    o: &Orientation,
    pops: &TripletPopulations,
) -> Result<LevelPopulations, ExperimentError> {
    let eig = eig_adiabatic(&static_hamiltonian(ctx, zfs, o))?;
    Ok(populations_from_eigensystem(&eig, o, pops))
}

#[derive(Debug, Clone, Serialize)]
pub struct PolarizationMap {
    /// p₊₁ − p₋₁ per grid orientation.
    pub difference: Vec<f64>,
    /// (p₊₁ − p₋₁)/(p₊₁ + p₋₁) per grid orientation.
    pub normalized: Vec<f64>,
    /// Grid-weighted averages of the two.
    pub average: f64,
    pub average_normalized: f64,
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let num = neumaier_sum(values.iter().zip(weights).map(|(v, w)| v * w));
    num / neumaier_sum(weights.iter().copied())
}

pub fn overtone_polarization_map(
    ctx: &FieldContext,
    zfs: &ZfsTensor,
    grid: &PowderGrid,
    pops: &TripletPopulations,
) -> Result<PolarizationMap, ExperimentError> {
    if grid.is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    let levels: Vec<LevelPopulations> = grid
        .orientations
        .par_iter()
        .map(|o| eigenstate_populations(ctx, zfs, o, pops))
        .collect::<Result<_, _>>()?;
    let difference: Vec<f64> = levels.iter().map(LevelPopulations::polarization).collect();
    let normalized: Vec<f64> = levels.iter().map(LevelPopulations::normalized_polarization).collect();
    Ok(PolarizationMap {
        average: weighted_mean(&difference, &grid.weights),
        average_normalized: weighted_mean(&normalized, &grid.weights),
        difference,
        normalized,
    })
}

/// Which transitions contribute to a field sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransitionFilter {
    #[default]
    All,
    SingleQuantum,
    Overtone,
}

pub fn echo_field_sweep(
    template: &FieldContext,
    zfs: &ZfsTensor,
    grid: &PowderGrid,
    pops: &TripletPopulations,
    b_axis: UniformAxis,
    bandwidth: f64,
) -> Result<Spectrum, ExperimentError> {
    echo_field_sweep_with(template, zfs, grid, pops, b_axis, bandwidth, TransitionFilter::All)
}

/// Echo-detected field sweep: at each field bin centre, every transition within
/// `bandwidth` of ω_MW contributes moment² × (population difference of the pair).
pub fn echo_field_sweep_with(
    template: &FieldContext,
    zfs: &ZfsTensor,
    grid: &PowderGrid,
    pops: &TripletPopulations,
    b_axis: UniformAxis,
    bandwidth: f64,
    filter: TransitionFilter,
) -> Result<Spectrum, ExperimentError> {
    if !(bandwidth > 0.0) {
        return Err(ExperimentError::Bandwidth(bandwidth));
    }
    if grid.is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    let mw = template.omega_mw;
    let intensity: Vec<f64> = b_axis
        .centers()
        .par_iter()
        .map(|&b0| -> Result<f64, ExperimentError> {
            let ctx = template.with_b0(b0)?;
            let mut terms = Vec::new();
            for (o, w) in grid.iter() {
                let t = exact_transitions(&ctx, zfs, o)?;
                let p = populations_from_eigensystem(&t.eigen, o, pops);
                let lines = [
                    (t.sq_plus, t.moments.plus_zero, p.plus - p.zero, TransitionFilter::SingleQuantum),
                    (t.sq_minus, t.moments.zero_minus, p.zero - p.minus, TransitionFilter::SingleQuantum),
                    (t.overtone, t.moments.plus_minus, p.plus - p.minus, TransitionFilter::Overtone),
                ];
                for (gap, m2, dp, kind) in lines {
                    if (filter == TransitionFilter::All || filter == kind) && (gap - mw).abs() < bandwidth {
                        terms.push(w * m2 * dp);
                    }
                }
            }
            terms.sort_by(f64::total_cmp);
            Ok(neumaier_sum(terms))
        })
        .collect::<Result<_, _>>()?;
    Ok(Spectrum::new(AxisKind::Field, b_axis, intensity)
        .with_meta("omega_mw_rad_s", mw)
        .with_meta("bandwidth_rad_s", bandwidth)
        .with_meta("orientations", grid.len())
        .with_meta("filter", format!("{filter:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SweepDirection {
    /// Field swept from B₀ + B_sweep/2 down to B₀ − B_sweep/2.
    #[default]
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IseConfig {
    /// Drive strength ω₁, rad/s.
    pub omega1: f64,
    /// Microwave pulse width, s.
    pub t_mw: f64,
    /// Field sweep width, T.
    pub b_sweep: f64,
    /// Shot repetition rate, Hz.
    pub rep_rate: f64,
    pub rep_count: usize,
    /// Nuclear Larmor frequency, rad/s.
    pub omega_0n: f64,
    /// Secular hyperfine a, rad/s.
    pub hyperfine_secular: f64,
    /// Pseudo-secular hyperfine b, rad/s.
    pub hyperfine_pseudosecular: f64,
    pub electron_polarization: f64,
    /// Propagation step, s.
    pub dt: f64,
    pub direction: SweepDirection,
    /// Fraction of nuclear polarization lost between shots.
    pub leakage: f64,
}

impl Default for IseConfig {
    fn default() -> Self {
        Self {
            omega1: TAU * 20e6,
            t_mw: 5e-6,
            b_sweep: 0.4e-3,
            rep_rate: 500.0,
            rep_count: 1000,
            omega_0n: TAU * 8.74e6,
            hyperfine_secular: TAU * 1e6,
            hyperfine_pseudosecular: TAU * 0.3e6,
            electron_polarization: 0.046,
            dt: 1e-9,
            direction: SweepDirection::Down,
            leakage: 0.0,
        }
    }
}

impl IseConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::IseConfig(m.into()));
        if !(self.t_mw > 0.0) {
            return bad("t_mw must be positive");
        }
        if !(self.b_sweep >= 0.0) {
            return bad("b_sweep must be non-negative");
        }
        if !(self.electron_polarization.abs() <= 1.0) {
            return bad("|electron_polarization| must not exceed 1");
        }
        if !(self.dt > 0.0) || !(self.rep_rate > 0.0) || !(0.0..=1.0).contains(&self.leakage) {
            return bad("dt and rep_rate must be positive and leakage in [0, 1]");
        }
        if ![self.omega1, self.omega_0n, self.hyperfine_secular, self.hyperfine_pseudosecular].iter().all(|v| v.is_finite()) {
            return bad("non-finite frequency");
        }
        Ok(())
    }
}

/// Electron pseudo-spin {|+1⟩, |−1⟩} ⊗ nuclear spin-½ under
/// H(t) = Δ(t)σz/2 + Ωσx/2 + ω_n I_z + a σz I_z + b σz I_x, with Δ linear in t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedIse {
    /// Pseudo-spin nutation Ω, rad/s.
    pub nutation: f64,
    pub detuning_start: f64,
    pub detuning_end: f64,
    pub duration: f64,
    pub omega_0n: f64,
    pub a: f64,
    pub b: f64,
    pub dt: f64,
}

/// Largest detuning change per step, in radians of accumulated phase, that still
/// counts as a resolved sweep.
pub const MAX_SWEEP_PHASE_PER_STEP: f64 = 0.05;

type Op4 = Matrix4<Complex64>;

fn kron2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> Op4 {
    Op4::from_fn(|r, c| real(a[r / 2][c / 2] * b[r % 2][c % 2]))
}

const ID2: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];
const SX2: [[f64; 2]; 2] = [[0.0, 1.0], [1.0, 0.0]];
const SZ2: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, -1.0]];

fn expm_hermitian4(h: &Op4, t: f64) -> Op4 {
    let sym = (h + h.adjoint()) * real(0.5);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let phases = Op4::from_diagonal(&eig.eigenvalues.map(|e| Complex64::from_polar(1.0, -e * t)));
    eig.eigenvectors * phases * eig.eigenvectors.adjoint()
}

impl ReducedIse {
    /// Upper bound on the frequencies present, Hz; sets the step requirement.
    pub fn max_frequency(&self) -> f64 {
        (self.detuning_start.abs().max(self.detuning_end.abs())
            + self.nutation.abs()
            + self.omega_0n.abs()
            + self.a.abs()
            + self.b.abs())
            / TAU
    }

    /// Change of 2⟨I_z⟩ for unit electron polarization along σz; the transfer
    /// for polarization P is exactly P times this value.
    pub fn unit_transfer(&self) -> Result<f64, ExperimentError> {
        if !(self.duration > 0.0) || !(self.dt > 0.0) {
            return Err(ExperimentError::IseConfig("duration and dt must be positive".into()));
        }
        let n = (self.duration / self.dt).ceil().max(1.0) as usize;
        let dt = self.duration / n as f64;
        crate::spin::check_resolution(dt, self.max_frequency())?;
        let phase = (self.detuning_end - self.detuning_start).abs() / n as f64 * dt;
        if phase > MAX_SWEEP_PHASE_PER_STEP {
            return Err(ExperimentError::SweepTooFast { phase, limit: MAX_SWEEP_PHASE_PER_STEP });
        }
        let half = |m: [[f64; 2]; 2]| m.map(|r| r.map(|x| 0.5 * x));
        let electron_z = kron2(half(SZ2), ID2);
        let fixed = kron2(half(SX2), ID2) * real(self.nutation)
            + kron2(ID2, half(SZ2)) * real(self.omega_0n)
            + kron2(SZ2, half(SZ2)) * real(self.a)
            + kron2(SZ2, half(SX2)) * real(self.b);
        let mut u = Op4::identity();
        for k in 0..n {
            let t = (k as f64 + 0.5) * dt;
            let detuning = self.detuning_start + (self.detuning_end - self.detuning_start) * t / self.duration;
            u = expm_hermitian4(&(fixed + electron_z * real(detuning)), dt) * u;
        }
        // ρ₀ = (1 + Pσz)/2 ⊗ 1/2; only the σz part can produce nuclear polarization
        let rho = u * kron2(SZ2, ID2) * u.adjoint() * real(0.25);
        Ok((rho * kron2(ID2, SZ2)).trace().re)
    }

    pub fn transfer(&self, electron_polarization: f64) -> Result<f64, ExperimentError> {
        if self.b == 0.0 {
            // I_z commutes with H: nothing to transfer
            return Ok(0.0);
        }
        Ok(electron_polarization * self.unit_transfer()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IseShot {
    pub delta_nuclear_polarization: f64,
    /// Pseudo-spin nutation Ω used for this orientation, rad/s.
    pub nutation: f64,
    pub detuning_start: f64,
    pub detuning_end: f64,
}

/// Reduced model for one orientation. Ω is twice the overtone coupling, the
/// detuning follows the exact overtone gap at `ctx.b0` relative to ω_MW and moves
/// by 2|γ_e| per tesla of sweep.
pub fn ise_reduced_model(ctx: &FieldContext, zfs: &ZfsTensor, o: &Orientation, cfg: &IseConfig) -> Result<ReducedIse, ExperimentError> {
    cfg.validate()?;
    let drive = ctx.with_omega1(cfg.omega1, ctx.chi)?;
    let nutation = 2.0 * SwTransform::new(&drive, zfs, o)?.overtone_nutation();
    let centre = exact_transitions(&drive, zfs, o)?.overtone - drive.omega_mw;
    let half_span = drive.gamma_e.abs() * cfg.b_sweep;
    let (start, end) = match cfg.direction {
        SweepDirection::Down => (centre + half_span, centre - half_span),
        SweepDirection::Up => (centre - half_span, centre + half_span),
    };
    Ok(ReducedIse {
        nutation,
        detuning_start: start,
        detuning_end: end,
        duration: cfg.t_mw,
        omega_0n: cfg.omega_0n,
        a: cfg.hyperfine_secular,
        b: cfg.hyperfine_pseudosecular,
        dt: cfg.dt,
    })
}

pub fn ise_shot(ctx: &FieldContext, zfs: &ZfsTensor, o: &Orientation, cfg: &IseConfig) -> Result<IseShot, ExperimentError> {
    let model = ise_reduced_model(ctx, zfs, o, cfg)?;
    Ok(IseShot {
        delta_nuclear_polarization: model.transfer(cfg.electron_polarization)?,
        nutation: model.nutation,
        detuning_start: model.detuning_start,
        detuning_end: model.detuning_end,
    })
}

/// Powder-averaged single-shot transfer.
pub fn ise_powder_shot(ctx: &FieldContext, zfs: &ZfsTensor, grid: &PowderGrid, cfg: &IseConfig) -> Result<f64, ExperimentError> {
    if grid.is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    let shots: Vec<f64> = grid
        .orientations
        .par_iter()
        .map(|o| ise_shot(ctx, zfs, o, cfg).map(|s| s.delta_nuclear_polarization))
        .collect::<Result<_, _>>()?;
    Ok(weighted_mean(&shots, &grid.weights))
}

/// Nuclear polarization after each of `cfg.rep_count` shots, each adding
/// `per_shot` and losing `cfg.leakage` of what was there.
pub fn accumulate_shots(per_shot: f64, cfg: &IseConfig) -> Result<TimeTrace, ExperimentError> {
    cfg.validate()?;
    let n = cfg.rep_count.max(1);
    let mut p = 0.0;
    let mut values = Vec::with_capacity(n + 1);
    values.push(p);
    for _ in 0..n {
        p = (1.0 - cfg.leakage) * p + per_shot;
        values.push(p);
    }
    let times = (0..=n).map(|k| k as f64 / cfg.rep_rate).collect();
    Ok(TimeTrace::new(times, values)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BuildupModel {
    /// P(t) = P_max(1 − e^{−t/T_build}).
    Saturating,
    /// P(t) = P₀e^{−t/T₁}.
    Decaying,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BuildupFit {
    pub model: BuildupModel,
    /// P_max for the saturating model, P₀ for the decaying one.
    pub p_max: f64,
    /// T_build or T₁, s.
    pub time_constant: f64,
    pub p_max_std: f64,
    pub time_constant_std: f64,
    /// False when the time constant is not pinned down by the data.
    pub identifiable: bool,
    pub converged: bool,
    pub rms_residual: f64,
}

impl BuildupFit {
    pub fn t_build(&self) -> Option<f64> {
        (self.model == BuildupModel::Saturating).then_some(self.time_constant)
    }

    pub fn t1(&self) -> Option<f64> {
        (self.model == BuildupModel::Decaying).then_some(self.time_constant)
    }
}

/// Least-squares fit in (P, ln T) so the time constant stays positive.
pub fn fit_buildup(trace: &TimeTrace, model: BuildupModel) -> Result<BuildupFit, ExperimentError> {
    let n = trace.len();
    if n < 4 {
        return Err(ExperimentError::TooFewSamples(n));
    }
    let (t, y) = (&trace.times, &trace.values);
    let span = t[n - 1] - t[0];
    let shape = |x: f64| match model {
        BuildupModel::Saturating => 1.0 - x,
        BuildupModel::Decaying => x,
    };
    let dshape = match model {
        BuildupModel::Saturating => -1.0,
        BuildupModel::Decaying => 1.0,
    };
    // seeds: amplitude from the extreme sample, T from where the curve crosses 1 − 1/e of it
    let amp0 = match model {
        BuildupModel::Saturating => y[n - 1],
        BuildupModel::Decaying => y[0],
    };
    let level = match model {
        BuildupModel::Saturating => amp0 * (1.0 - (-1.0f64).exp()),
        BuildupModel::Decaying => amp0 * (-1.0f64).exp(),
    };
    let cross = (0..n).find(|&i| match model {
        BuildupModel::Saturating => y[i].abs() >= level.abs(),
        BuildupModel::Decaying => y[i].abs() <= level.abs(),
    });
    let t0 = cross.map(|i| t[i] - t[0]).filter(|v| *v > 0.0).unwrap_or(span / 3.0);
    let p0 = DVector::from_vec(vec![amp0, t0.max(span * 1e-3).ln()]);

    let out = levenberg_marquardt(p0, LmOptions::default(), |p| {
        let tau = p[1].exp();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 2);
        for i in 0..n {
            let e = (-t[i] / tau).exp();
            r[i] = p[0] * shape(e) - y[i];
            j[(i, 0)] = shape(e);
            // d e/d ln τ = e·t/τ
            j[(i, 1)] = p[0] * dshape * e * t[i] / tau;
        }
        (r, j)
    });
    let tau = out.params[1].exp();
    let errs = out.std_errors();
    let (p_std, ln_tau_std) = errs.map(|e| (e[0], e[1])).unwrap_or((f64::INFINITY, f64::INFINITY));
    let min_spacing = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let identifiable = ln_tau_std.is_finite() && ln_tau_std < 0.5 && tau > 0.5 * min_spacing && tau < 10.0 * span;
    Ok(BuildupFit {
        model,
        p_max: out.params[0],
        time_constant: tau,
        p_max_std: p_std,
        time_constant_std: tau * ln_tau_std,
        identifiable,
        converged: out.converged,
        rms_residual: (out.sum_sq / n as f64).sqrt(),
    })
}

/// Expected echo-signal ratio as spin count × overtone polarization × ε ratios.
pub fn signal_ratio_estimate(n_spins_ratio: f64, polarization_ratio: f64, epsilon_ratio: f64) -> Result<f64, ExperimentError> {
    let v = [n_spins_ratio, polarization_ratio, epsilon_ratio];
    if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(ExperimentError::Ratio(v));
    }
    Ok(v.iter().product())
}
