//! Subcommand arguments and bodies. Laboratory units (MHz, GHz, mT, T, µs,
//! degrees) are converted to SI here and nowhere else.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use log::info;
use overtone_core::analytics::{
    field_profile as field_profile_spectrum, lineshape_frequency, nutation_distribution, overtone_nutation,
    overtone_resonance_with,
    shift_width, FieldProfileMode, NutationDistribution, NutationGeometry, OvertoneLineshape,
};
use overtone_core::experiment::{
    accumulate_shots, echo_field_sweep_with, fit_buildup, ise_powder_shot, ise_reduced_model, overtone_polarization_map, BuildupModel,
    SweepDirection, TransitionFilter,
};
use overtone_core::oracle::{
    exact_transitions, fit_decaying_sinusoid, powder_histogram, rabi_trace_with, NutationSource, Quantity,
    RabiOptions, ResonanceSource, Weight,
};
use overtone_core::zfs::{powder_grid, PowderScheme};
use overtone_core::{
    run_suite, FieldContext, Frame, IseConfig, Orientation, PowderGrid, ShiftModel, Spectrum, Suite, TimeTrace,
    TripletPopulations, UniformAxis, ValidationOptions, ZfsTensor, GAMMA_E,
};
use serde::Serialize;

use crate::error::CliError;
use crate::export::{self, Format, Series, Sink};
use crate::{FieldArgs, GridArgs, GridKind, OutputArgs, ShiftModelArg, SystemArgs, SystemPreset};

const MHZ: f64 = TAU * 1e6;

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub field: FieldArgs,
    #[arg(long, value_enum, default_value = "full")]
    pub shift_model: ShiftModelArg,
    #[arg(long, default_value_t = 400)]
    pub bins: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileMode {
    /// Probability density in B₀.
    Density,
    /// Frequency lineshape at ω_MW with the field substituted, no Jacobian.
    Raw,
}

#[derive(Debug, Args)]
pub struct FieldProfileArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Microwave frequency, GHz.
    #[arg(long, default_value_t = 11.6)]
    pub mw_ghz: f64,
    #[arg(long, value_enum, default_value = "full")]
    pub shift_model: ShiftModelArg,
    #[arg(long, value_enum, default_value = "density")]
    pub mode: ProfileMode,
    #[arg(long, default_value_t = 400)]
    pub bins: usize,
    /// Field axis bounds, mT (default: the support with margins).
    #[arg(long)]
    pub lo_mt: Option<f64>,
    #[arg(long)]
    pub hi_mt: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeometryArg {
    Perpendicular,
    Parallel,
}

#[derive(Debug, Args)]
pub struct NutationArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub field: FieldArgs,
    #[arg(long, value_enum, default_value = "perpendicular")]
    pub geometry: GeometryArg,
    #[arg(long, default_value_t = 400)]
    pub bins: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameArg {
    Lab,
    Rotating,
}

#[derive(Debug, Args)]
pub struct RabiArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub field: FieldArgs,
    /// Euler angles of the molecule, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 45.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value = "lab")]
    pub frame: FrameArg,
    /// Shift model of the rotating-frame Hamiltonian.
    #[arg(long, value_enum, default_value = "second-order")]
    pub shift_model: ShiftModelArg,
    /// Trace length, µs (default: four predicted nutation periods).
    #[arg(long)]
    pub duration_us: Option<f64>,
    #[arg(long, default_value_t = 400)]
    pub samples: usize,
    #[arg(long, default_value_t = 50)]
    pub steps_per_period: usize,
    /// Orientations for a powder nutation spectrum instead of a single trace (0 = off).
    #[arg(long, default_value_t = 0)]
    pub powder: usize,
    #[arg(long, default_value_t = overtone_core::validation::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub bins: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantityArg {
    Resonance,
    Nutation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Exact,
    Formula,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightArg {
    Unit,
    Moment2,
    Polarization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PopulationsArg {
    /// Preset of the selected system (uniform for custom).
    Auto,
    Pentacene,
    Nv,
    Uniform,
}

#[derive(Debug, Args)]
pub struct PowderArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub field: FieldArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value = "resonance")]
    pub quantity: QuantityArg,
    #[arg(long, value_enum, default_value = "exact")]
    pub source: SourceArg,
    #[arg(long, value_enum, default_value = "unit")]
    pub weight: WeightArg,
    #[arg(long, value_enum, default_value = "auto")]
    pub populations: PopulationsArg,
    /// Shift model of the closed-form resonance.
    #[arg(long, value_enum, default_value = "full")]
    pub shift_model: ShiftModelArg,
    #[arg(long, default_value_t = 200)]
    pub bins: usize,
    /// Axis bounds, MHz (default: the closed-form support with margins).
    #[arg(long)]
    pub lo_mhz: Option<f64>,
    #[arg(long)]
    pub hi_mhz: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolarizationMode {
    /// Per-orientation overtone polarization and its powder average.
    Map,
    /// Echo-detected field sweep.
    Echo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    All,
    SingleQuantum,
    Overtone,
}

#[derive(Debug, Args)]
pub struct PolarizationArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub field: FieldArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value = "map")]
    pub mode: PolarizationMode,
    #[arg(long, value_enum, default_value = "auto")]
    pub populations: PopulationsArg,
    /// Echo sweep: field range, mT.
    #[arg(long, default_value_t = 150.0)]
    pub lo_mt: f64,
    #[arg(long, default_value_t = 500.0)]
    pub hi_mt: f64,
    #[arg(long, default_value_t = 350)]
    pub bins: usize,
    /// Echo sweep: excitation half-width, MHz.
    #[arg(long, default_value_t = 10.0)]
    pub bandwidth_mhz: f64,
    #[arg(long, value_enum, default_value = "all")]
    pub filter: FilterArg,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Down,
    Up,
}

#[derive(Debug, Args)]
pub struct IseArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub field: FieldArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Microwave pulse width, µs.
    #[arg(long, default_value_t = 5.0)]
    pub t_mw_us: f64,
    /// Field sweep width during the pulse, mT.
    #[arg(long, default_value_t = 0.4)]
    pub b_sweep_mt: f64,
    #[arg(long, default_value_t = 500.0)]
    pub rep_rate_hz: f64,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Nuclear Larmor frequency, MHz.
    #[arg(long, default_value_t = 8.74)]
    pub nuclear_mhz: f64,
    /// Secular hyperfine coupling, MHz.
    #[arg(long, default_value_t = 1.0)]
    pub a_mhz: f64,
    /// Pseudo-secular hyperfine coupling, MHz.
    #[arg(long, default_value_t = 0.3)]
    pub b_mhz: f64,
    /// Electron polarization available per shot.
    #[arg(long, default_value_t = 0.046)]
    pub pe: f64,
    /// Propagation step, ns (default: 1 ns or finer, as the fastest orientation requires).
    #[arg(long)]
    pub dt_ns: Option<f64>,
    #[arg(long, value_enum, default_value = "down")]
    pub direction: DirectionArg,
    /// Fraction of nuclear polarization lost between shots.
    #[arg(long, default_value_t = 0.0)]
    pub leakage: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModelArg {
    Saturating,
    Decaying,
    Sinusoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimeUnitArg {
    /// Taken from the header suffix (`_s`, `_ms`, `_us`, `_ns`), else seconds.
    Auto,
    S,
    Ms,
    Us,
    Ns,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Two-column CSV trace (time, value).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "saturating")]
    pub model: FitModelArg,
    #[arg(long, value_enum, default_value = "auto")]
    pub time_unit: TimeUnitArg,
    /// Result file (JSON); `-` writes to stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value = "all")]
    pub suite: Suite,
    #[arg(long, value_enum, default_value = "full")]
    pub shift_model: ShiftModelArg,
    #[arg(long, default_value_t = overtone_core::validation::DEFAULT_SEED)]
    pub seed: u64,
    /// Report file (JSON); `-` writes to stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

// ---- boundary conversions ----

fn zfs(s: &SystemArgs) -> Result<ZfsTensor, CliError> {
    match (s.system, s.d_mhz, s.e_mhz) {
        (SystemPreset::Pentacene, None, None) => Ok(ZfsTensor::pentacene()),
        (SystemPreset::Nv, None, None) => Ok(ZfsTensor::nv()),
        (SystemPreset::Custom, Some(d), e) => Ok(ZfsTensor::from_mhz(d, e.unwrap_or(0.0))?),
        (SystemPreset::Custom, None, _) => Err(CliError::Config("--system custom needs --d-mhz".into())),
        _ => Err(CliError::Config("--d-mhz/--e-mhz only apply to --system custom".into())),
    }
}

fn populations(choice: PopulationsArg, system: SystemPreset) -> TripletPopulations {
    match (choice, system) {
        (PopulationsArg::Pentacene, _) | (PopulationsArg::Auto, SystemPreset::Pentacene) => TripletPopulations::pentacene(),
        (PopulationsArg::Nv, _) | (PopulationsArg::Auto, SystemPreset::Nv) => TripletPopulations::nv(),
        (PopulationsArg::Uniform, _) | (PopulationsArg::Auto, SystemPreset::Custom) => TripletPopulations::uniform(),
    }
}

fn degrees(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v.to_radians())
    } else {
        Err(CliError::Config(format!("--{name} must be finite")))
    }
}

/// Field context with the drive set; `mw` is used when `--mw-ghz` is absent.
fn context(f: &FieldArgs, default_omega1_mhz: f64, mw: f64) -> Result<FieldContext, CliError> {
    let chi = degrees("chi", f.chi)?;
    let omega_mw = f.mw_ghz.map_or(mw, |g| TAU * g * 1e9);
    let omega1 = f.omega1_mhz.unwrap_or(default_omega1_mhz) * MHZ;
    Ok(FieldContext::new(f.b0, 0.0, chi, omega_mw, GAMMA_E)?.with_omega1(omega1, chi)?)
}

fn bare_overtone(b0: f64) -> f64 {
    2.0 * -GAMMA_E * b0
}

fn grid(g: &GridArgs, default_n: usize) -> Result<PowderGrid, CliError> {
    let scheme = match g.grid {
        GridKind::Random => PowderScheme::Random,
        GridKind::Gl => PowderScheme::GaussLegendre { phi_points: g.phi_points },
    };
    Ok(powder_grid(scheme, g.orientations.unwrap_or(default_n), g.seed)?)
}

fn axis(lo: f64, hi: f64, bins: usize) -> Result<UniformAxis, CliError> {
    Ok(UniformAxis::new(lo, hi, bins)?)
}

fn model(m: ShiftModelArg) -> ShiftModel {
    m.into()
}

/// Run parameters recorded in every exported file.
fn run_meta(command: &str, s: &SystemArgs, z: &ZfsTensor) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("command".into(), command.into());
    m.insert("system".into(), format!("{:?}", s.system).to_lowercase());
    m.insert("d_mhz".into(), (z.d() / MHZ).to_string());
    m.insert("e_mhz".into(), (z.e() / MHZ).to_string());
    m
}

fn field_meta(m: &mut BTreeMap<String, String>, ctx: &FieldContext) {
    m.insert("b0_t".into(), ctx.b0.to_string());
    m.insert("mw_ghz".into(), (ctx.omega_mw / TAU / 1e9).to_string());
    m.insert("omega1_mhz".into(), (ctx.omega1() / MHZ).to_string());
    m.insert("chi_deg".into(), ctx.chi.to_degrees().to_string());
}

fn grid_meta(m: &mut BTreeMap<String, String>, g: &GridArgs, n: usize) {
    m.insert("grid".into(), format!("{:?}", g.grid).to_lowercase());
    m.insert("orientations".into(), n.to_string());
    m.insert("seed".into(), g.seed.to_string());
}

// ---- output ----

fn sink(o: &OutputArgs) -> Sink {
    let path = (o.out.as_os_str() != "-").then(|| o.out.clone());
    Sink::new(path, o.format)
}

fn json_sink(path: &std::path::Path) -> Sink {
    let path = (path.as_os_str() != "-").then(|| path.to_path_buf());
    Sink::new(path, Some(Format::Json))
}

fn emit_spectrum(spectrum: Spectrum, extra: BTreeMap<String, String>, o: &OutputArgs, title: &str) -> Result<(), CliError> {
    let mut s = export::smooth_spectrum(&spectrum, o.smooth);
    for (k, v) in extra {
        s.metadata.entry(k).or_insert(v);
    }
    let out = sink(o);
    let text = match out.format {
        Format::Csv => export::to_csv(&export::spectrum_series(&s)),
        Format::Json => export::to_json(&s)?,
        Format::Svg => export::to_svg(&export::spectrum_series(&s), title),
    };
    out.write(text.as_bytes())
}

fn emit_series<T: Serialize>(series: &Series, json: &T, o: &OutputArgs, title: &str) -> Result<(), CliError> {
    let out = sink(o);
    let text = match out.format {
        Format::Csv => export::to_csv(series),
        Format::Json => export::to_json(json)?,
        Format::Svg => export::to_svg(series, title),
    };
    out.write(text.as_bytes())
}

/// Side summaries go to stdout when the main result went to a file, else stderr.
fn emit_summary<T: Serialize>(summary: &T, o: &OutputArgs) -> Result<(), CliError> {
    let text = export::to_json(summary)?;
    if sink(o).is_stdout() {
        eprint!("{text}");
        Ok(())
    } else {
        Sink::new(None, Some(Format::Json)).write(text.as_bytes())
    }
}

// ---- commands ----

pub fn spectrum(a: &SpectrumArgs) -> Result<(), CliError> {
    let z = zfs(&a.system)?;
    let ctx = context(&a.field, 1.0, bare_overtone(a.field.b0))?;
    let shape = OvertoneLineshape::from_context(&ctx, &z, model(a.shift_model));
    let (lo, hi) = shape.support();
    let pad = 0.1 * (hi - lo).max(MHZ);
    let s = lineshape_frequency(&ctx, &z, axis(lo - pad, hi + pad, a.bins)?, model(a.shift_model));
    let mut meta = run_meta("spectrum", &a.system, &z);
    field_meta(&mut meta, &ctx);
    emit_spectrum(s, meta, &a.output, "overtone lineshape")
}

pub fn field_profile(a: &FieldProfileArgs) -> Result<(), CliError> {
    let z = zfs(&a.system)?;
    let omega_mw = TAU * a.mw_ghz * 1e9;
    if !(omega_mw > 0.0) {
        return Err(CliError::Config(format!("--mw-ghz = {} must be positive", a.mw_ghz)));
    }
    let m = model(a.shift_model);
    let sw = shift_width(omega_mw, &z, GAMMA_E, m)?;
    let reference = omega_mw / (2.0 * GAMMA_E.abs());
    // the support runs from the bare field down to h = 3, i.e. 8/7 of B_s
    let edge = sw.b_s * 8.0 / 7.0;
    let lo = a.lo_mt.map_or(reference + 1.25 * edge, |v| v * 1e-3);
    let hi = a.hi_mt.map_or(reference - 0.25 * edge, |v| v * 1e-3);
    let mode = match a.mode {
        ProfileMode::Density => FieldProfileMode::Density,
        ProfileMode::Raw => FieldProfileMode::RawSubstitution,
    };
    let s = field_profile_spectrum(omega_mw, &z, GAMMA_E, axis(lo, hi, a.bins)?, m, mode)?;
    let mut meta = run_meta("field-profile", &a.system, &z);
    meta.insert("reference_field_mt".into(), (reference * 1e3).to_string());
    meta.insert("shift_mt".into(), (sw.b_s * 1e3).to_string());
    meta.insert("width_mt".into(), (sw.b_w * 1e3).to_string());
    emit_spectrum(s, meta, &a.output, "overtone field profile")
}

pub fn nutation_dist(a: &NutationArgs) -> Result<(), CliError> {
    let z = zfs(&a.system)?;
    let ctx = context(&a.field, 1.0, bare_overtone(a.field.b0))?;
    let geometry = match a.geometry {
        GeometryArg::Perpendicular => NutationGeometry::Perpendicular,
        GeometryArg::Parallel => NutationGeometry::Parallel,
    };
    let eo = ctx.epsilon(&z) * ctx.omega1();
    let max = NutationDistribution::new(geometry, eo)?.max();
    let s = nutation_distribution(geometry, eo, axis(0.0, 1.1 * max, a.bins)?)?;
    let mut meta = run_meta("nutation-dist", &a.system, &z);
    field_meta(&mut meta, &ctx);
    emit_spectrum(s, meta, &a.output, "overtone nutation distribution")
}

#[derive(Serialize)]
struct RabiSummary {
    beta_deg: f64,
    frame: String,
    /// Closed-form overtone nutation frequency, MHz.
    predicted_nutation_mhz: f64,
    /// Half the fitted oscillation frequency of p₊₁ − p₋₁, MHz.
    fitted_nutation_mhz: f64,
    fit: overtone_core::oracle::FitResult,
}

#[derive(Serialize)]
struct PowderNutationSummary {
    orientations: usize,
    /// Mode of the moment-weighted powder nutation spectrum, MHz.
    dominant_nutation_mhz: Option<f64>,
    /// Closed-form upper end of the axial distribution, MHz.
    closed_form_max_mhz: f64,
}

pub fn rabi(a: &RabiArgs) -> Result<(), CliError> {
    let z = zfs(&a.system)?;
    let ctx = context(&a.field, 1.0, bare_overtone(a.field.b0))?;
    let mut meta = run_meta("rabi", &a.system, &z);

    if a.powder > 0 {
        let g = powder_grid(PowderScheme::Random, a.powder, a.seed)?;
        let max = 1.5 * ctx.epsilon(&z) * ctx.omega1();
        let quantity = Quantity::Nutation { chi: ctx.chi, source: NutationSource::Exact };
        let s = powder_histogram(&ctx, &z, &g, quantity, Weight::Moment2, axis(0.0, 1.25 * max, a.bins)?)?;
        let summary = PowderNutationSummary {
            orientations: g.len(),
            dominant_nutation_mhz: s.peak().map(|p| p / MHZ),
            closed_form_max_mhz: max / MHZ,
        };
        field_meta(&mut meta, &ctx);
        meta.insert("seed".into(), a.seed.to_string());
        emit_spectrum(s, meta, &a.output, "powder overtone nutation")?;
        return emit_summary(&summary, &a.output);
    }

    let o = Orientation::wrapped(degrees("alpha", a.alpha)?, degrees("beta", a.beta)?, degrees("gamma", a.gamma)?)?;
    let predicted = overtone_nutation(&ctx, &z, &o)?;
    if !(predicted > 0.0) {
        return Err(CliError::Numeric("no overtone coupling at this orientation".into()));
    }
    let frame = match a.frame {
        FrameArg::Lab => Frame::Lab,
        FrameArg::Rotating => Frame::Rotating(model(a.shift_model)),
    };
    // on resonance by default: the exact gap in the lab, the model's own resonance otherwise
    let drive = match (a.field.mw_ghz, frame) {
        (Some(ghz), _) => TAU * ghz * 1e9,
        (None, Frame::Lab) => exact_transitions(&ctx, &z, &o)?.overtone,
        (None, Frame::Rotating(m)) => overtone_resonance_with(m, &ctx, &z, &o)?,
    };
    let duration = a.duration_us.map_or(4.0 * TAU / predicted, |us| us * 1e-6);
    let opts = RabiOptions { samples: a.samples, steps_per_period: a.steps_per_period, ..RabiOptions::default() };
    info!("rabi: drive {:.6} GHz, {:.3} µs", drive / TAU / 1e9, duration * 1e6);
    let trace = rabi_trace_with(&ctx, &z, &o, drive, duration, frame, opts)?;
    let fit = fit_decaying_sinusoid(&trace)?;
    let summary = RabiSummary {
        beta_deg: a.beta,
        frame: format!("{frame:?}"),
        predicted_nutation_mhz: predicted / MHZ,
        fitted_nutation_mhz: fit.frequency / 2.0 / MHZ,
        fit,
    };
    field_meta(&mut meta, &ctx);
    meta.insert("drive_ghz".into(), (drive / TAU / 1e9).to_string());
    meta.insert("euler_deg".into(), format!("{} {} {}", a.alpha, a.beta, a.gamma));
    meta.insert("frame".into(), format!("{frame:?}"));
    let series = export::trace_series(&trace, "population_difference", ("time_us", 1e-6), meta);
    emit_series(&series, &trace, &a.output, "overtone Rabi oscillation")?;
    emit_summary(&summary, &a.output)
}

pub fn powder(a: &PowderArgs) -> Result<(), CliError> {
    let z = zfs(&a.system)?;
    let ctx = context(&a.field, 1.0, bare_overtone(a.field.b0))?;
    let g = grid(&a.grid, 20_000)?;
    let (quantity, lo, hi) = match a.quantity {
        QuantityArg::Resonance => {
            let source = match a.source {
                SourceArg::Exact => ResonanceSource::Exact,
                SourceArg::Formula => ResonanceSource::Formula(model(a.shift_model)),
            };
            let (lo, hi) = OvertoneLineshape::from_context(&ctx, &z, ShiftModel::FullCommutator).support();
            let pad = 0.25 * (hi - lo).max(MHZ);
            (Quantity::Resonance(source), lo - pad, hi + pad)
        }
        QuantityArg::Nutation => {
            let source = match a.source {
                SourceArg::Exact => NutationSource::Exact,
                SourceArg::Formula => NutationSource::Formula,
            };
            let max = 1.5 * ctx.epsilon(&z) * ctx.omega1();
            (Quantity::Nutation { chi: ctx.chi, source }, 0.0, 1.25 * max)
        }
    };
    let weight = match a.weight {
        WeightArg::Unit => Weight::Unit,
        WeightArg::Moment2 => Weight::Moment2,
        WeightArg::Polarization => Weight::Moment2Polarization(populations(a.populations, a.system.system)),
    };
    let lo = a.lo_mhz.map_or(lo, |v| v * MHZ);
    let hi = a.hi_mhz.map_or(hi, |v| v * MHZ);
    let s = powder_histogram(&ctx, &z, &g, quantity, weight, axis(lo, hi, a.bins)?)?;
    let mut meta = run_meta("powder", &a.system, &z);
    field_meta(&mut meta, &ctx);
    grid_meta(&mut meta, &a.grid, g.len());
    emit_spectrum(s, meta, &a.output, "powder histogram")
}

#[derive(Serialize)]
struct OrientationRow {
    alpha_deg: f64,
    beta_deg: f64,
    gamma_deg: f64,
    weight: f64,
    difference: f64,
    normalized: f64,
}

#[derive(Serialize)]
struct PolarizationReport {
    average: f64,
    average_normalized: f64,
    metadata: BTreeMap<String, String>,
    orientations: Vec<OrientationRow>,
}

pub fn polarization(a: &PolarizationArgs) -> Result<(), CliError> {
    let z = zfs(&a.system)?;
    let pops = populations(a.populations, a.system.system);
    let mut meta = run_meta("polarization", &a.system, &z);
    match a.mode {
        PolarizationMode::Map => {
            let ctx = context(&a.field, 1.0, bare_overtone(a.field.b0))?;
            let g = grid(&a.grid, 2_000)?;
            let map = overtone_polarization_map(&ctx, &z, &g, &pops)?;
            field_meta(&mut meta, &ctx);
            grid_meta(&mut meta, &a.grid, g.len());
            meta.insert("average".into(), map.average.to_string());
            meta.insert("average_normalized".into(), map.average_normalized.to_string());
            let rows: Vec<OrientationRow> = g
                .iter()
                .zip(map.difference.iter().zip(&map.normalized))
                .map(|((o, w), (d, n))| OrientationRow {
                    alpha_deg: o.alpha.to_degrees(),
                    beta_deg: o.beta.to_degrees(),
                    gamma_deg: o.gamma.to_degrees(),
                    weight: w,
                    difference: *d,
                    normalized: *n,
                })
                .collect();
            let out = sink(&a.output);
            let text = match out.format {
                Format::Csv => polarization_csv(&meta, &rows),
                Format::Json => export::to_json(&PolarizationReport {
                    average: map.average,
                    average_normalized: map.average_normalized,
                    metadata: meta,
                    orientations: rows,
                })?,
                Format::Svg => {
                    let mut sorted: Vec<(f64, f64)> = rows.iter().map(|r| (r.beta_deg, r.difference)).collect();
                    sorted.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
                    let series = Series {
                        x_label: "beta_deg".into(),
                        y_label: "population_difference".into(),
                        x: sorted.iter().map(|p| p.0).collect(),
                        y: sorted.iter().map(|p| p.1).collect(),
                        metadata: meta,
                    };
                    export::to_svg(&series, "overtone polarization")
                }
            };
            out.write(text.as_bytes())
        }
        PolarizationMode::Echo => {
            let ctx = context(&a.field, 1.0, TAU * 11.6e9)?;
            let g = grid(&a.grid, 2_000)?;
            let filter = match a.filter {
                FilterArg::All => TransitionFilter::All,
                FilterArg::SingleQuantum => TransitionFilter::SingleQuantum,
                FilterArg::Overtone => TransitionFilter::Overtone,
            };
            let b_axis = axis(a.lo_mt * 1e-3, a.hi_mt * 1e-3, a.bins)?;
            let s = echo_field_sweep_with(&ctx, &z, &g, &pops, b_axis, a.bandwidth_mhz * MHZ, filter)?;
            field_meta(&mut meta, &ctx);
            meta.remove("b0_t");
            grid_meta(&mut meta, &a.grid, g.len());
            emit_spectrum(s, meta, &a.output, "echo-detected field sweep")
        }
    }
}

fn polarization_csv(meta: &BTreeMap<String, String>, rows: &[OrientationRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for (k, v) in meta {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out.push_str("alpha_deg,beta_deg,gamma_deg,weight,difference,normalized\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}",
            r.alpha_deg, r.beta_deg, r.gamma_deg, r.weight, r.difference, r.normalized
        );
    }
    out
}

#[derive(Serialize)]
struct IseSummary {
    omega_mw_ghz: f64,
    orientations: usize,
    per_shot: f64,
    final_polarization: f64,
    fit: Option<overtone_core::experiment::BuildupFit>,
}

pub fn ise(a: &IseArgs) -> Result<(), CliError> {
    let z = zfs(&a.system)?;
    let g = grid(&a.grid, 200)?;
    let cfg = IseConfig {
        omega1: a.field.omega1_mhz.unwrap_or(20.0) * MHZ,
        t_mw: a.t_mw_us * 1e-6,
        b_sweep: a.b_sweep_mt * 1e-3,
        rep_rate: a.rep_rate_hz,
        rep_count: a.reps,
        omega_0n: a.nuclear_mhz * MHZ,
        hyperfine_secular: a.a_mhz * MHZ,
        hyperfine_pseudosecular: a.b_mhz * MHZ,
        electron_polarization: a.pe,
        dt: a.dt_ns.unwrap_or(1.0) * 1e-9,
        direction: match a.direction {
            DirectionArg::Down => SweepDirection::Down,
            DirectionArg::Up => SweepDirection::Up,
        },
        leakage: a.leakage,
    };
    cfg.validate()?;
    // default microwave frequency: the powder-mean exact overtone gap at B₀
    let probe = context(&a.field, cfg.omega1 / MHZ, bare_overtone(a.field.b0))?;
    let omega_mw = match a.field.mw_ghz {
        Some(ghz) => TAU * ghz * 1e9,
        None => {
            let gaps: Vec<f64> = g
                .iter()
                .map(|(o, w)| exact_transitions(&probe, &z, o).map(|t| t.overtone * w))
                .collect::<Result<_, _>>()?;
            overtone_core::oracle::neumaier_sum(gaps) / overtone_core::oracle::neumaier_sum(g.weights.iter().copied())
        }
    };
    let ctx = probe.with_omega_mw(omega_mw)?;
    let cfg = match a.dt_ns {
        Some(_) => cfg,
        None => IseConfig { dt: auto_step(&ctx, &z, &g, &cfg)?, ..cfg },
    };
    let per_shot = ise_powder_shot(&ctx, &z, &g, &cfg)?;
    let trace = accumulate_shots(per_shot, &cfg)?;
    let fit = fit_buildup(&trace, BuildupModel::Saturating).ok();
    let summary = IseSummary {
        omega_mw_ghz: omega_mw / TAU / 1e9,
        orientations: g.len(),
        per_shot,
        final_polarization: *trace.values.last().unwrap_or(&0.0),
        fit,
    };
    let mut meta = run_meta("ise", &a.system, &z);
    field_meta(&mut meta, &ctx);
    grid_meta(&mut meta, &a.grid, g.len());
    meta.insert("per_shot".into(), per_shot.to_string());
    let series = export::trace_series(&trace, "nuclear_polarization", ("time_s", 1.0), meta);
    emit_series(&series, &trace, &a.output, "ISE buildup")?;
    emit_summary(&summary, &a.output)
}

/// Largest step that resolves every orientation of the grid, capped at `cfg.dt`.
fn auto_step(ctx: &FieldContext, z: &ZfsTensor, g: &PowderGrid, cfg: &IseConfig) -> Result<f64, CliError> {
    let mut f_max: f64 = 0.0;
    for o in &g.orientations {
        f_max = f_max.max(ise_reduced_model(ctx, z, o, cfg)?.max_frequency());
    }
    let limit = 0.99 / (overtone_core::spin::MIN_STEPS_PER_PERIOD * f_max);
    Ok(cfg.dt.min(limit))
}

#[derive(Serialize)]
#[serde(untagged)]
enum FitReport {
    Buildup(overtone_core::experiment::BuildupFit),
    Sinusoid {
        #[serde(flatten)]
        fit: overtone_core::oracle::FitResult,
        frequency_mhz: f64,
    },
}

fn time_scale(unit: TimeUnitArg, header: Option<&str>) -> f64 {
    let from_header = || {
        let first = header?.split(',').next()?.trim().to_ascii_lowercase();
        [("_ns", 1e-9), ("_us", 1e-6), ("_ms", 1e-3), ("_s", 1.0)]
            .into_iter()
            .find(|(suffix, _)| first.ends_with(suffix))
            .map(|(_, f)| f)
    };
    match unit {
        TimeUnitArg::Auto => from_header().unwrap_or(1.0),
        TimeUnitArg::S => 1.0,
        TimeUnitArg::Ms => 1e-3,
        TimeUnitArg::Us => 1e-6,
        TimeUnitArg::Ns => 1e-9,
    }
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| CliError::io(&a.input, e))?;
    let cols = export::parse_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", a.input.display())))?;
    let scale = time_scale(a.time_unit, cols.header.as_deref());
    let times = cols.x.iter().map(|t| t * scale).collect();
    let trace = TimeTrace::new(times, cols.y)
        .map_err(|e| CliError::Config(format!("{}: {e} ({} rows)", a.input.display(), cols.x.len())))?;
    let report = match a.model {
        FitModelArg::Saturating => FitReport::Buildup(fit_buildup(&trace, BuildupModel::Saturating)?),
        FitModelArg::Decaying => FitReport::Buildup(fit_buildup(&trace, BuildupModel::Decaying)?),
        FitModelArg::Sinusoid => {
            let fit = fit_decaying_sinusoid(&trace)?;
            FitReport::Sinusoid { frequency_mhz: fit.frequency / MHZ, fit }
        }
    };
    json_sink(&a.out).write(export::to_json(&report)?.as_bytes())
}

pub fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let opts = ValidationOptions { shift_model: model(a.shift_model), seed: a.seed, informational: true };
    let report = run_suite(a.suite, &opts);
    for o in &report.outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        eprintln!("[{tag}] criterion {} {}: {} ({:.1} s)", o.id, o.name, o.detail, o.elapsed_s);
        for line in &o.info {
            eprintln!("       info: {line}");
        }
    }
    json_sink(&a.out).write(export::to_json(&report)?.as_bytes())?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<String> = report.outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
        Err(CliError::Validation(format!("criteria {} failed", failed.join(", "))))
    }
}
