//! Closed-form overtone results: resonance condition, nutation rate, powder
//! lineshapes in frequency and field, the field shift/width and the nutation
//! frequency distributions.
//!
//! All lineshapes are the η → 0 limit. Spectra are bin-averaged densities: each
//! bin holds (CDF(right) − CDF(left))/width, so integrable singularities never
//! depend on where a sample point lands.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::hamiltonian::{FieldContext, HamiltonianError, ShiftModel, SwTransform};
use crate::zfs::{epsilon, Orientation, ZfsError, ZfsTensor};

/// η above which the axial closed forms are flagged as approximate.
pub const AXIAL_ETA_WARNING: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Zfs(#[from] ZfsError),
    #[error("axis must have lo < hi and at least one bin (lo = {lo}, hi = {hi}, bins = {bins})")]
    Axis { lo: f64, hi: f64, bins: usize },
    #[error("axes differ: {0}")]
    AxisMismatch(String),
    #[error("ε·ω₁ must be positive, got {0}")]
    NutationScale(f64),
    #[error("no overtone resonance exists at this microwave frequency within the perturbative regime")]
    NoResonance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    /// Angular frequency, rad/s.
    Frequency,
    /// Static field, T.
    Field,
    /// Nutation angular frequency, rad/s.
    NutationRate,
    /// Time, s.
    Time,
}

/// Uniform binning of [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformAxis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl UniformAxis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self, AnalyticsError> {
        if !(lo < hi) || bins == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err(AnalyticsError::Axis { lo, hi, bins });
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        if i == self.bins {
            self.hi
        } else {
            self.lo + i as f64 * self.width()
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.center(i)).collect()
    }

    /// Bin holding `x`, if inside [lo, hi]; the right edge belongs to the last bin.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let k = ((x - self.lo) / self.width()).floor() as usize;
        Some(k.min(self.bins - 1))
    }
}

/// Binned intensity on a uniform axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub axis_kind: AxisKind,
    pub axis: UniformAxis,
    pub intensity: Vec<f64>,
    /// Set when the intensities form a density integrating to one.
    pub normalized: bool,
    pub metadata: BTreeMap<String, String>,
}

impl Spectrum {
    pub fn new(axis_kind: AxisKind, axis: UniformAxis, intensity: Vec<f64>) -> Self {
        assert_eq!(axis.bins, intensity.len(), "one intensity per bin");
        Self { axis_kind, axis, intensity, normalized: false, metadata: BTreeMap::new() }
    }

    /// Spectrum from cumulative probabilities evaluated at the bin edges.
    pub fn from_cdf(axis_kind: AxisKind, axis: UniformAxis, cdf: impl Fn(f64) -> f64) -> Self {
        let edges: Vec<f64> = (0..=axis.bins).map(|i| cdf(axis.edge(i))).collect();
        let w = axis.width();
        let intensity = edges.windows(2).map(|e| ((e[1] - e[0]) / w).max(0.0)).collect();
        let mut s = Self::new(axis_kind, axis, intensity);
        s.normalized = (edges[axis.bins] - edges[0] - 1.0).abs() < 1e-9;
        s
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn centers(&self) -> Vec<f64> {
        self.axis.centers()
    }

    /// Σ intensity·width.
    pub fn integral(&self) -> f64 {
        crate::oracle::neumaier_sum(self.intensity.iter().map(|v| v * self.axis.width()))
    }

    /// Bin centre with the largest intensity.
    pub fn peak(&self) -> Option<f64> {
        let (i, _) = self
            .intensity
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
        Some(self.axis.center(i))
    }

    /// Intensity-weighted mean axis value.
    pub fn mean(&self) -> f64 {
        let total: f64 = self.intensity.iter().sum();
        self.intensity.iter().enumerate().map(|(i, v)| v * self.axis.center(i)).sum::<f64>() / total
    }
}

/// Overtone resonance 2ω_e + 2εω_ZFS·h (full-commutator weighting).
pub fn overtone_resonance(ctx: &FieldContext, zfs: &ZfsTensor, o: &Orientation) -> Result<f64, AnalyticsError> {
    overtone_resonance_with(ShiftModel::FullCommutator, ctx, zfs, o)
}

pub fn overtone_resonance_with(
    model: ShiftModel,
    ctx: &FieldContext,
    zfs: &ZfsTensor,
    o: &Orientation,
) -> Result<f64, AnalyticsError> {
    Ok(SwTransform::new(ctx, zfs, o)?.overtone_resonance(model))
}

/// On-resonance nutation frequency εω₁|f sin χ + g cos χ|.
pub fn overtone_nutation(ctx: &FieldContext, zfs: &ZfsTensor, o: &Orientation) -> Result<f64, AnalyticsError> {
    Ok(SwTransform::new(ctx, zfs, o)?.overtone_nutation())
}

/// Axial powder lineshape of the overtone line.
///
/// With u = ω′/(6U), s = √(1 − u) and U the shift unit (εω_ZFS times the
/// commutator weight), the density is (√3/36)/U · s⁻¹[(1+2s)^{−½} + (1−2s)^{−½}],
/// the second branch present only for u > 3/4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvertoneLineshape {
    /// Bare overtone frequency 2ω_e.
    pub origin: f64,
    /// Shift unit U.
    pub unit: f64,
}

/// Prefactor making the lineshape a unit-mass density.
pub const LINESHAPE_PREFACTOR: f64 = 0.048_112_522_432_468_816; // √3/36

impl OvertoneLineshape {
    pub fn new(origin: f64, eps_omega_zfs: f64, model: ShiftModel) -> Self {
        Self { origin, unit: eps_omega_zfs * model.commutator_weight() }
    }

    pub fn from_context(ctx: &FieldContext, zfs: &ZfsTensor, model: ShiftModel) -> Self {
        Self::new(2.0 * ctx.omega_e(), ctx.epsilon(zfs) * zfs.omega_zfs(), model)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.origin, self.origin + 6.0 * self.unit)
    }

    pub fn singularities(&self) -> [f64; 2] {
        [self.origin + 4.5 * self.unit, self.origin + 6.0 * self.unit]
    }

    /// Offset ω′ = ω_res − 2ω_e as a function of x = −cos β.
    pub fn offset_of(&self, x: f64) -> f64 {
        4.5 * self.unit * (1.0 - x * x) * (1.0 + 3.0 * x * x)
    }

    /// Preimages x₁ ≤ x₂ ≤ 0 of an offset; x₂ exists only above 4.5U.
    pub fn preimages(&self, offset: f64) -> Option<(f64, Option<f64>)> {
        let u = offset / (6.0 * self.unit);
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let s = (1.0 - u).sqrt();
        let x1 = -((1.0 + 2.0 * s) / 3.0).sqrt();
        let x2 = (u >= 0.75).then(|| -((1.0 - 2.0 * s) / 3.0).max(0.0).sqrt());
        Some((x1, x2))
    }

    pub fn density(&self, omega: f64) -> f64 {
        let u = (omega - self.origin) / (6.0 * self.unit);
        if !(0.0..1.0).contains(&u) {
            return 0.0;
        }
        let s = (1.0 - u).sqrt();
        let mut branches = (1.0 + 2.0 * s).powf(-0.5);
        if u > 0.75 {
            branches += (1.0 - 2.0 * s).powf(-0.5);
        }
        LINESHAPE_PREFACTOR / self.unit / s * branches
    }

    /// Probability that the resonance lies below `omega`.
    pub fn cdf(&self, omega: f64) -> f64 {
        let u = (omega - self.origin) / (6.0 * self.unit);
        unit_cdf(u)
    }
}

/// CDF of u = ω′/(6U) ∈ [0, 1] for a uniform cos β.
fn unit_cdf(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    // the CDF has a square-root edge at u = 1, so round-off in u right at the
    // support end would otherwise leave ~1e-8 of mass missing
    if u >= 1.0 - 16.0 * f64::EPSILON {
        return 1.0;
    }
    let s = (1.0 - u).sqrt();
    let mass = 1.0 - ((1.0 + 2.0 * s) / 3.0).sqrt();
    if u < 0.75 {
        mass
    } else {
        mass + ((1.0 - 2.0 * s) / 3.0).max(0.0).sqrt()
    }
}

/// CDF of h = |f|² + |g|² over the axial powder (h ∈ [0, 3]).
pub fn h_cdf(h: f64) -> f64 {
    unit_cdf(h / 3.0)
}

fn warn_rhombic(zfs: &ZfsTensor) {
    if zfs.eta().abs() > AXIAL_ETA_WARNING {
        log::warn!(
            "η = {:.4} exceeds {AXIAL_ETA_WARNING}; the axial closed form is only approximate",
            zfs.eta()
        );
    }
}

pub fn lineshape_frequency(
    ctx: &FieldContext,
    zfs: &ZfsTensor,
    axis: UniformAxis,
    model: ShiftModel,
) -> Spectrum {
    warn_rhombic(zfs);
    let shape = OvertoneLineshape::from_context(ctx, zfs, model);
    Spectrum::from_cdf(AxisKind::Frequency, axis, |w| shape.cdf(w))
        .with_meta("quantity", "overtone_lineshape")
        .with_meta("b0_t", ctx.b0)
        .with_meta("d_rad_s", zfs.d())
        .with_meta("eta", zfs.eta())
        .with_meta("shift_model", format!("{model:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldProfileMode {
    /// Density in B₀ including the ω → B₀ Jacobian.
    #[default]
    Density,
    /// The frequency lineshape evaluated at ω_MW with ω_e(B₀) substituted, no Jacobian.
    RawSubstitution,
}

/// Resonance field for a given h, on the high-field branch.
fn resonance_field(omega_mw: f64, zfs: &ZfsTensor, g: f64, w: f64, h: f64) -> Option<f64> {
    let disc = omega_mw * omega_mw - 16.0 * w * zfs.omega_zfs().powi(2) * h;
    (disc >= 0.0).then(|| (omega_mw + disc.sqrt()) / (4.0 * g))
}

/// Field-swept overtone lineshape at fixed microwave frequency.
pub fn field_profile(
    omega_mw: f64,
    zfs: &ZfsTensor,
    gamma_e: f64,
    axis: UniformAxis,
    model: ShiftModel,
    mode: FieldProfileMode,
) -> Result<Spectrum, AnalyticsError> {
    warn_rhombic(zfs);
    let g = gamma_e.abs();
    let w = model.commutator_weight();
    let wz2 = zfs.omega_zfs().powi(2);
    let b_edge = resonance_field(omega_mw, zfs, g, w, 3.0).ok_or(AnalyticsError::NoResonance)?;
    let b_half = omega_mw / (2.0 * g);

    let spectrum = match mode {
        FieldProfileMode::Density => {
            let cdf = |b: f64| {
                if b <= b_edge {
                    0.0
                } else if b >= b_half || wz2 == 0.0 {
                    1.0
                } else {
                    let h = (omega_mw - 2.0 * g * b) * g * b / (2.0 * w * wz2);
                    1.0 - h_cdf(h)
                }
            };
            Spectrum::from_cdf(AxisKind::Field, axis, cdf)
        }
        FieldProfileMode::RawSubstitution => {
            let values = (0..axis.bins)
                .map(|i| {
                    let b = axis.center(i);
                    let eps = epsilon(zfs, b, gamma_e).map_err(AnalyticsError::from)?;
                    let shape = OvertoneLineshape::new(2.0 * g * b, eps * zfs.omega_zfs(), model);
                    let v = shape.density(omega_mw);
                    Ok(if v.is_finite() { v } else { 0.0 })
                })
                .collect::<Result<Vec<f64>, AnalyticsError>>()?;
            Spectrum::new(AxisKind::Field, axis, values)
        }
    };
    Ok(spectrum
        .with_meta("quantity", "overtone_field_profile")
        .with_meta("omega_mw_rad_s", omega_mw)
        .with_meta("d_rad_s", zfs.d())
        .with_meta("eta", zfs.eta())
        .with_meta("shift_model", format!("{model:?}"))
        .with_meta("mode", format!("{mode:?}")))
}

/// Field-profile centre shift and width, tesla.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftWidth {
    pub b_s: f64,
    pub b_w: f64,
}

/// B_s = −w(21/16)ε²ω_MW/|γ|, B_w = w(3/8)ε²ω_MW/|γ|, ε taken at ω_MW/(2|γ|).
pub fn shift_width(omega_mw: f64, zfs: &ZfsTensor, gamma_e: f64, model: ShiftModel) -> Result<ShiftWidth, AnalyticsError> {
    let g = gamma_e.abs();
    let b_half = omega_mw / (2.0 * g);
    let eps = epsilon(zfs, b_half, gamma_e)?;
    let scale = model.commutator_weight() * eps * eps * omega_mw / g;
    Ok(ShiftWidth { b_s: -21.0 / 16.0 * scale, b_w: 3.0 / 8.0 * scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NutationGeometry {
    /// B₁ ⊥ B₀ (χ = π/2).
    Perpendicular,
    /// B₁ ∥ B₀ (χ = 0).
    Parallel,
}

impl NutationGeometry {
    pub fn chi(self) -> f64 {
        match self {
            NutationGeometry::Perpendicular => std::f64::consts::FRAC_PI_2,
            NutationGeometry::Parallel => 0.0,
        }
    }
}

/// Axial powder distribution of the overtone nutation frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NutationDistribution {
    pub geometry: NutationGeometry,
    pub eps_omega1: f64,
}

impl NutationDistribution {
    pub fn new(geometry: NutationGeometry, eps_omega1: f64) -> Result<Self, AnalyticsError> {
        if !(eps_omega1 > 0.0) || !eps_omega1.is_finite() {
            return Err(AnalyticsError::NutationScale(eps_omega1));
        }
        Ok(Self { geometry, eps_omega1 })
    }

    /// Upper end of the support, (3/2)εω₁ for both geometries.
    pub fn max(&self) -> f64 {
        1.5 * self.eps_omega1
    }

    /// Nutation frequency at polar angle β.
    pub fn rate_at(&self, beta: f64) -> f64 {
        let (s, c) = beta.sin_cos();
        match self.geometry {
            NutationGeometry::Perpendicular => 3.0 * self.eps_omega1 * (s * c).abs(),
            NutationGeometry::Parallel => 1.5 * self.eps_omega1 * s * s,
        }
    }

    pub fn density(&self, w: f64) -> f64 {
        let eo = self.eps_omega1;
        if !(0.0..self.max()).contains(&w) {
            return 0.0;
        }
        match self.geometry {
            NutationGeometry::Perpendicular => {
                let z = w / (3.0 * eo);
                let r = (1.0 - 4.0 * z * z).sqrt();
                ((1.0 - r).sqrt() + (1.0 + r).sqrt()) / (3.0 * std::f64::consts::SQRT_2 * eo * r)
            }
            NutationGeometry::Parallel => 1.0 / (3.0 * eo) / (1.0 - 2.0 * w / (3.0 * eo)).sqrt(),
        }
    }

    pub fn cdf(&self, w: f64) -> f64 {
        let eo = self.eps_omega1;
        if w <= 0.0 {
            return 0.0;
        }
        if w >= self.max() {
            return 1.0;
        }
        match self.geometry {
            NutationGeometry::Perpendicular => {
                let z = w / (3.0 * eo);
                let r = (1.0 - 4.0 * z * z).max(0.0).sqrt();
                1.0 - ((1.0 + r) / 2.0).sqrt() + ((1.0 - r) / 2.0).sqrt()
            }
            NutationGeometry::Parallel => 1.0 - (1.0 - 2.0 * w / (3.0 * eo)).max(0.0).sqrt(),
        }
    }
}

pub fn nutation_distribution(
    geometry: NutationGeometry,
    eps_omega1: f64,
    axis: UniformAxis,
) -> Result<Spectrum, AnalyticsError> {
    let d = NutationDistribution::new(geometry, eps_omega1)?;
    Ok(Spectrum::from_cdf(AxisKind::NutationRate, axis, |w| d.cdf(w))
        .with_meta("quantity", "overtone_nutation_distribution")
        .with_meta("geometry", format!("{geometry:?}"))
        .with_meta("eps_omega1_rad_s", eps_omega1))
}
