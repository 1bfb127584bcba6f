//! Zero-field-splitting tensor, Euler orientations, the orientation functions
//! f, g, h′, h and powder orientation grids.

use std::f64::consts::{PI, SQRT_2, TAU};

use nalgebra::Matrix3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::spin::{c64, real, spin1_operators, Operator3};

/// Free-electron gyromagnetic ratio, rad s⁻¹ T⁻¹ (γ_e/2π = −28.02495 GHz/T).
pub const GAMMA_E: f64 = -TAU * 28.024_95e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZfsError {
    #[error("rhombicity |η| = {0} exceeds 1; reorder the principal axes")]
    Rhombicity(f64),
    #[error("ZFS parameters must be finite (D = {d}, E = {e})")]
    NonFinite { d: f64, e: f64 },
    #[error("Larmor frequency ω_e = −γ_e·B₀ must be positive (B₀ = {b0} T, γ_e = {gamma_e})")]
    Larmor { b0: f64, gamma_e: f64 },
    #[error("orientation out of range: α = {0}, β = {1}, γ = {2}")]
    Orientation(f64, f64, f64),
    #[error("powder grid needs at least one orientation")]
    EmptyGrid,
}

/// ZFS parameters D and E in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZfsTensor {
    d: f64,
    e: f64,
}

impl ZfsTensor {
    pub fn new(d: f64, e: f64) -> Result<Self, ZfsError> {
        if !d.is_finite() || !e.is_finite() {
            return Err(ZfsError::NonFinite { d, e });
        }
        let t = Self { d, e };
        if t.eta().abs() > 1.0 + 1e-12 {
            return Err(ZfsError::Rhombicity(t.eta()));
        }
        Ok(t)
    }

    pub fn from_mhz(d_mhz: f64, e_mhz: f64) -> Result<Self, ZfsError> {
        Self::new(TAU * d_mhz * 1e6, TAU * e_mhz * 1e6)
    }

    /// Pentacene triplet in p-terphenyl.
    pub fn pentacene() -> Self {
        Self::from_mhz(1395.57, 53.35).expect("valid preset")
    }

    /// NV⁻ centre in diamond.
    pub fn nv() -> Self {
        Self::from_mhz(2870.0, 0.0).expect("valid preset")
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn e(&self) -> f64 {
        self.e
    }

    pub fn omega_zfs(&self) -> f64 {
        self.d / 3.0
    }

    pub fn eta(&self) -> f64 {
        if self.d == 0.0 {
            0.0
        } else {
            3.0 * self.e / self.d
        }
    }

    pub fn with_eta_zero(&self) -> Self {
        Self { d: self.d, e: 0.0 }
    }
}

/// Euler angles (ZYZ) taking the principal axis system to the laboratory frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl Orientation {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ZfsError> {
        let ok = (0.0..TAU).contains(&alpha) && (0.0..=PI).contains(&beta) && (0.0..TAU).contains(&gamma);
        if !ok {
            return Err(ZfsError::Orientation(alpha, beta, gamma));
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// Accepts any α, γ (wrapped into [0, 2π)); β must still lie in [0, π].
    pub fn wrapped(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ZfsError> {
        if !alpha.is_finite() || !gamma.is_finite() {
            return Err(ZfsError::Orientation(alpha, beta, gamma));
        }
        Self::new(wrap_angle(alpha), beta, wrap_angle(gamma))
    }

    /// Polar angle only (α = γ = 0).
    pub fn polar(beta: f64) -> Result<Self, ZfsError> {
        Self::new(0.0, beta, 0.0)
    }

    pub fn identity() -> Self {
        Self { alpha: 0.0, beta: 0.0, gamma: 0.0 }
    }
}

fn rot_z(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Passive frame rotation: column k holds the PAS axis k in laboratory
/// coordinates, so a PAS tensor maps as `M·T·Mᵀ`.
pub fn frame_rotation(o: &Orientation) -> Matrix3<f64> {
    rot_z(-o.gamma) * rot_y(-o.beta) * rot_z(-o.alpha)
}

/// The dimensionless orientation functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fgh {
    pub f: Complex64,
    pub g: Complex64,
    pub h_prime: f64,
    pub h: f64,
}

pub fn fgh(o: &Orientation, eta: f64) -> Fgh {
    let (sb, cb) = o.beta.sin_cos();
    let (s2a, c2a) = (2.0 * o.alpha).sin_cos();
    let f = Complex64::from_polar(1.0, o.gamma)
        * c64(3.0 * sb * cb - eta * c2a * sb * cb, -eta * s2a * sb);
    let g = Complex64::from_polar(1.0, 2.0 * o.gamma)
        * c64(0.5 * (3.0 * sb * sb + eta * c2a * (1.0 + cb * cb)), eta * s2a * cb);
    let h_prime = 0.5 * ((3.0 * cb * cb - 1.0) + eta * c2a * sb * sb);
    Fgh { f, g, h_prime, h: f.norm_sqr() + g.norm_sqr() }
}

/// ε = ω_ZFS/ω_e with ω_e = −γ_e·B₀.
pub fn epsilon(zfs: &ZfsTensor, b0: f64, gamma_e: f64) -> Result<f64, ZfsError> {
    let omega_e = -gamma_e * b0;
    if !(omega_e > 0.0) || !omega_e.is_finite() {
        return Err(ZfsError::Larmor { b0, gamma_e });
    }
    Ok(zfs.omega_zfs() / omega_e)
}

/// Cartesian ZFS tensor in the laboratory frame (rad/s).
pub fn zfs_cartesian_lab(zfs: &ZfsTensor, o: &Orientation) -> Matrix3<f64> {
    let w = zfs.omega_zfs();
    let eta = zfs.eta();
    let pas = Matrix3::from_diagonal(&nalgebra::Vector3::new(w * (-1.0 + eta), w * (-1.0 - eta), 2.0 * w));
    let m = frame_rotation(o);
    m * pas * m.transpose()
}

/// H_ZFS = Σ D_ij S_i S_j in the laboratory frame, built independently of `fgh`.
pub fn zfs_lab_matrix(zfs: &ZfsTensor, o: &Orientation) -> Operator3 {
    let s = spin1_operators();
    let d = zfs_cartesian_lab(zfs, o);
    let ops = [s.sx, s.sy, s.sz];
    let mut h = Operator3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            h += ops[i] * ops[j] * real(d[(i, j)]);
        }
    }
    h
}

/// Coefficients c_q with H = Σ c_q T2q (index q + 2).
pub fn spherical_components(h: &Operator3) -> [Complex64; 5] {
    let s = spin1_operators();
    let mut out = [Complex64::new(0.0, 0.0); 5];
    for q in -2..=2i8 {
        let t = s.t2(q);
        let num = (t.adjoint() * h).trace();
        let den = (t.adjoint() * t).trace();
        out[(q + 2) as usize] = num / den;
    }
    out
}

/// Recover f, g, h′ from a laboratory-frame ZFS matrix by spherical-tensor projection.
pub fn fgh_from_matrix(h_zfs: &Operator3, omega_zfs: f64) -> Fgh {
    let c = spherical_components(h_zfs);
    let f = c[3] / omega_zfs;
    let g = c[4] / omega_zfs;
    let h_prime = c[2].re / (6f64.sqrt() * omega_zfs);
    Fgh { f, g, h_prime, h: f.norm_sqr() + g.norm_sqr() }
}

/// Zero-field eigenstates T_x, T_y, T_z of the PAS Hamiltonian, expressed in
/// the Zeeman basis of the same frame.
pub fn zero_field_states_pas() -> [crate::spin::State3; 3] {
    use crate::spin::State3;
    let r = 1.0 / SQRT_2;
    [
        State3::new(real(-r), real(0.0), real(r)),
        State3::new(c64(0.0, r), real(0.0), c64(0.0, r)),
        State3::new(real(0.0), real(1.0), real(0.0)),
    ]
}

/// Unitary mapping PAS-frame state vectors onto laboratory-frame state vectors.
pub fn state_rotation(o: &Orientation) -> Operator3 {
    let t = zero_field_states_pas();
    let basis = Operator3::from_columns(&t);
    let m = frame_rotation(o).map(real);
    basis * m * basis.adjoint()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowderScheme {
    /// Uniform random rotations (α, cos β, γ uniform), equal weights.
    Random,
    /// Gauss–Legendre nodes in cos β times `phi_points` uniform points in each of α and γ.
    GaussLegendre { phi_points: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowderGrid {
    pub orientations: Vec<Orientation>,
    pub weights: Vec<f64>,
}

impl PowderGrid {
    pub fn single(o: Orientation) -> Self {
        Self { orientations: vec![o], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.orientations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orientations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Orientation, f64)> {
        self.orientations.iter().zip(self.weights.iter().copied())
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n and its derivative
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        // exact zero avoids a 0/0 at the centre node
        x[n / 2] = 0.0;
    }
    (x, w)
}

pub fn powder_grid(scheme: PowderScheme, n: usize, seed: u64) -> Result<PowderGrid, ZfsError> {
    if n == 0 {
        return Err(ZfsError::EmptyGrid);
    }
    match scheme {
        PowderScheme::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut orientations = Vec::with_capacity(n);
            for _ in 0..n {
                let alpha = wrap_angle(TAU * rng.random::<f64>());
                let beta = (1.0 - 2.0 * rng.random::<f64>()).clamp(-1.0, 1.0).acos();
                let gamma = wrap_angle(TAU * rng.random::<f64>());
                orientations.push(Orientation { alpha, beta, gamma });
            }
            Ok(PowderGrid { orientations, weights: vec![1.0 / n as f64; n] })
        }
        PowderScheme::GaussLegendre { phi_points } => {
            if phi_points == 0 {
                return Err(ZfsError::EmptyGrid);
            }
            let (x, w) = gauss_legendre(n);
            let m = phi_points;
            let mut orientations = Vec::with_capacity(n * m * m);
            let mut weights = Vec::with_capacity(n * m * m);
            for (xi, wi) in x.iter().zip(&w) {
                let beta = xi.clamp(-1.0, 1.0).acos();
                for ia in 0..m {
                    for ig in 0..m {
                        orientations.push(Orientation {
                            alpha: TAU * ia as f64 / m as f64,
                            beta,
                            gamma: TAU * ig as f64 / m as f64,
                        });
                        weights.push(0.5 * wi / (m * m) as f64);
                    }
                }
            }
            Ok(PowderGrid { orientations, weights })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::max_abs;
    use proptest::prelude::*;

    fn any_orientation() -> impl Strategy<Value = Orientation> {
        (0.0..TAU, 0.0..=PI, 0.0..TAU).prop_map(|(a, b, g)| Orientation::new(a, b, g).unwrap())
    }

    #[test]
    fn fgh_examples() {
        let v = fgh(&Orientation::identity(), 0.0);
        assert_eq!((v.f.norm(), v.g.norm(), v.h_prime, v.h), (0.0, 0.0, 1.0, 0.0));

        let v = fgh(&Orientation::polar(PI / 2.0).unwrap(), 0.0);
        assert!(v.f.norm() < 1e-15);
        assert!((v.g - real(1.5)).norm() < 1e-15);
        assert!((v.h - 9.0 / 4.0).abs() < 1e-15);

        let v = fgh(&Orientation::polar(PI / 4.0).unwrap(), 0.0);
        assert!((v.f - real(1.5)).norm() < 1e-15);
        assert!((v.g - real(0.75)).norm() < 1e-15);
        assert!((v.h - 45.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn presets() {
        let p = ZfsTensor::pentacene();
        assert!((p.eta() - 3.0 * 53.35 / 1395.57).abs() < 1e-15);
        assert!((p.omega_zfs() - TAU * 1395.57e6 / 3.0).abs() < 1e-3);
        assert_eq!(ZfsTensor::nv().eta(), 0.0);
        assert!(matches!(ZfsTensor::from_mhz(100.0, 40.0), Err(ZfsError::Rhombicity(_))));
    }

    #[test]
    fn epsilon_examples() {
        let e = epsilon(&ZfsTensor::pentacene(), 0.207, GAMMA_E).unwrap();
        assert!((e - 0.080).abs() < 0.001, "{e}");
        let e = epsilon(&ZfsTensor::nv(), 0.207, GAMMA_E).unwrap();
        assert!((e - 0.165).abs() < 0.001, "{e}");
        assert_eq!(epsilon(&ZfsTensor::new(0.0, 0.0).unwrap(), 0.3, GAMMA_E).unwrap(), 0.0);
        assert!(matches!(epsilon(&ZfsTensor::nv(), 0.0, GAMMA_E), Err(ZfsError::Larmor { .. })));
    }

    #[test]
    fn pas_form_at_identity() {
        let z = ZfsTensor::pentacene();
        let s = spin1_operators();
        let w = z.omega_zfs();
        let want = (s.sz * s.sz * real(3.0) - Operator3::identity() * real(2.0)
            + (s.sx * s.sx - s.sy * s.sy) * real(z.eta()))
            * real(w);
        assert!(max_abs(&(zfs_lab_matrix(&z, &Orientation::identity()) - want)) < 1e-6 * w);
    }

    #[test]
    fn orientation_validation() {
        assert!(Orientation::new(0.0, 3.5, 0.0).is_err());
        assert!(Orientation::new(TAU, 1.0, 0.0).is_err());
        let o = Orientation::wrapped(-1.0, 1.0, 7.0).unwrap();
        assert!((o.alpha - (TAU - 1.0)).abs() < 1e-15 && (o.gamma - (7.0 - TAU)).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        // exact through degree 13
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((integral - 2.0 / 13.0).abs() < 1e-14);
        let (x1, w1) = gauss_legendre(1);
        assert_eq!((x1[0], w1[0]), (0.0, 2.0));
    }

    #[test]
    fn single_node_grid() {
        let g = powder_grid(PowderScheme::GaussLegendre { phi_points: 1 }, 1, 0).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g.orientations[0].beta - PI / 2.0).abs() < 1e-15);
        assert!((g.weights[0] - 1.0).abs() < 1e-15);
        assert!(matches!(powder_grid(PowderScheme::Random, 0, 1), Err(ZfsError::EmptyGrid)));
    }

    #[test]
    fn grids_are_normalised_and_deterministic() {
        for scheme in [PowderScheme::Random, PowderScheme::GaussLegendre { phi_points: 4 }] {
            let a = powder_grid(scheme, 333, 9).unwrap();
            let b = powder_grid(scheme, 333, 9).unwrap();
            assert_eq!(a, b);
            let sum: f64 = a.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for o in &a.orientations {
                assert!(Orientation::new(o.alpha, o.beta, o.gamma).is_ok());
            }
        }
    }

    #[test]
    fn mean_h_over_random_powder() {
        // h = 9x²(1−x²) + (9/4)(1−x²)² with x = cos β uniform on [−1, 1]:
        // E[x²−x⁴] = 2/15, E[(1−x²)²] = 8/15, so E[h] = 18/15 + 18/15 = 12/5.
        let want = 12.0 / 5.0;
        let g = powder_grid(PowderScheme::Random, 1_000_000, 42).unwrap();
        let mean: f64 = g.iter().map(|(o, w)| w * fgh(o, 0.0).h).sum();
        // standard error of the mean is ~ 8e-4 here
        assert!((mean - want).abs() < 4e-3, "{mean}");
        let gl = powder_grid(PowderScheme::GaussLegendre { phi_points: 1 }, 8, 0).unwrap();
        let mean: f64 = gl.iter().map(|(o, w)| w * fgh(o, 0.0).h).sum();
        assert!((mean - want).abs() < 1e-13, "{mean}");
    }

    #[test]
    fn state_rotation_carries_zfs_hamiltonian() {
        let z = ZfsTensor::pentacene();
        let o = Orientation::new(0.4, 1.1, 2.3).unwrap();
        let u = state_rotation(&o);
        let pas = zfs_lab_matrix(&z, &Orientation::identity());
        let lab = u * pas * u.adjoint();
        assert!(max_abs(&(lab - zfs_lab_matrix(&z, &o))) < 1e-6 * z.omega_zfs());
        assert!(max_abs(&(u * u.adjoint() - Operator3::identity())) < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn axial_moduli(o in any_orientation()) {
            let v = fgh(&o, 0.0);
            let (sb, cb) = o.beta.sin_cos();
            prop_assert!((v.f.norm() - (3.0 * sb * cb).abs()).abs() < 1e-12);
            prop_assert!((v.g.norm() - 1.5 * sb * sb).abs() < 1e-12);
        }

        #[test]
        fn projection_matches_closed_forms(o in any_orientation(), eta in -1.0f64..1.0) {
            let d = TAU * 1e9;
            let z = ZfsTensor::new(d, eta * d / 3.0).unwrap();
            let h = zfs_lab_matrix(&z, &o);
            let proj = fgh_from_matrix(&h, z.omega_zfs());
            let v = fgh(&o, z.eta());
            prop_assert!((proj.f - v.f).norm() < 1e-10);
            prop_assert!((proj.g - v.g).norm() < 1e-10);
            prop_assert!((proj.h_prime - v.h_prime).abs() < 1e-10);
            // remaining components follow from hermiticity
            let c = spherical_components(&h);
            prop_assert!((c[1] + v.f.conj() * z.omega_zfs()).norm() < 1e-10 * z.omega_zfs());
            prop_assert!((c[0] - v.g.conj() * z.omega_zfs()).norm() < 1e-10 * z.omega_zfs());
            prop_assert!(h.trace().norm() < 1e-13 * z.omega_zfs());
        }

        #[test]
        fn h_independent_of_gamma(o in any_orientation(), eta in -1.0f64..1.0, g2 in 0.0..TAU) {
            let a = fgh(&o, eta).h;
            let b = fgh(&Orientation::new(o.alpha, o.beta, g2).unwrap(), eta).h;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn h_symmetric_about_equator(o in any_orientation()) {
            let a = fgh(&o, 0.0).h;
            let b = fgh(&Orientation::new(o.alpha, PI - o.beta, o.gamma).unwrap(), 0.0).h;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
