//! Spin-1 operator algebra, adiabatic eigen-decomposition and piecewise-constant
//! propagation.
//!
//! Basis order is |+1⟩, |0⟩, |−1⟩ throughout the crate.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

pub type Operator3 = Matrix3<Complex64>;
pub type State3 = Vector3<Complex64>;

/// Two eigenvalues closer than this (relative to the spectral scale) are
/// treated as degenerate when assigning adiabatic labels.
const DEGENERACY_TOL: f64 = 1e-12;
/// Hermiticity tolerance relative to the largest matrix element.
const HERMITIAN_TOL: f64 = 1e-10;
/// The propagation step must resolve the fastest frequency with this many
/// points per period.
pub const MIN_STEPS_PER_PERIOD: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("operator is not hermitian (relative violation {0:.3e})")]
    NotHermitian(f64),
    #[error("adiabatic labels are ambiguous: {0}")]
    AdiabaticDegeneracy(String),
    #[error("time step {dt:e} s under-resolves a {freq:e} Hz component (need dt <= {limit:e} s)")]
    UnderResolved { dt: f64, freq: f64, limit: f64 },
    #[error("time grid must be non-empty and strictly increasing")]
    BadTimeGrid,
    #[error("operator has non-finite elements")]
    NonFinite,
}

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn real(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Adiabatic tag of an eigenstate: the Zeeman state it connects to at high field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Plus,
    Zero,
    Minus,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Plus, Label::Zero, Label::Minus];

    pub fn index(self) -> usize {
        match self {
            Label::Plus => 0,
            Label::Zero => 1,
            Label::Minus => 2,
        }
    }

    pub fn m(self) -> i8 {
        1 - self.index() as i8
    }
}

/// Spin-1 Cartesian operators and the rank-2 spherical tensor components.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub sx: Operator3,
    pub sy: Operator3,
    pub sz: Operator3,
    pub s_plus: Operator3,
    pub s_minus: Operator3,
    /// T2q stored at index q + 2.
    t2: [Operator3; 5],
}

impl SpinOperators {
    pub fn t2(&self, q: i8) -> &Operator3 {
        assert!((-2..=2).contains(&q), "rank-2 component q={q} out of range");
        &self.t2[(q + 2) as usize]
    }

    pub fn identity() -> Operator3 {
        Operator3::identity()
    }
}

pub fn spin1_operators() -> SpinOperators {
    let r2 = std::f64::consts::SQRT_2;
    let z = real(0.0);
    let sz = Operator3::from_diagonal(&Vector3::new(real(1.0), z, real(-1.0)));
    let s_plus = Operator3::new(z, real(r2), z, z, z, real(r2), z, z, z);
    let s_minus = s_plus.adjoint();
    let sx = (s_plus + s_minus) * real(0.5);
    let sy = (s_plus - s_minus) * c64(0.0, -0.5);
    let one = Operator3::identity();

    let t20 = (sz * sz * real(3.0) - one * real(2.0)) * real(1.0 / 6f64.sqrt());
    let t21 = -(sz * s_plus + s_plus * sz) * real(0.5);
    let t2m1 = (sz * s_minus + s_minus * sz) * real(0.5);
    let t22 = s_plus * s_plus * real(0.5);
    let t2m2 = s_minus * s_minus * real(0.5);

    SpinOperators {
        sx,
        sy,
        sz,
        s_plus,
        s_minus,
        t2: [t2m2, t2m1, t20, t21, t22],
    }
}

pub fn commutator(a: &Operator3, b: &Operator3) -> Operator3 {
    a * b - b * a
}

pub fn max_abs(m: &Operator3) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest |H − H†| element relative to the largest |H| element.
pub fn hermiticity_violation(h: &Operator3) -> f64 {
    let scale = max_abs(h);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(h - h.adjoint())) / scale
}

pub fn check_hermitian(h: &Operator3) -> Result<(), SpinError> {
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SpinError::NonFinite);
    }
    let v = hermiticity_violation(h);
    if v > HERMITIAN_TOL {
        return Err(SpinError::NotHermitian(v));
    }
    Ok(())
}

/// Eigenpairs sorted by adiabatic label (index = `Label::index`).
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub energies: [f64; 3],
    pub states: [State3; 3],
}

impl EigenSystem {
    pub fn energy(&self, l: Label) -> f64 {
        self.energies[l.index()]
    }

    pub fn state(&self, l: Label) -> &State3 {
        &self.states[l.index()]
    }

    /// ⟨a|op|b⟩ between labelled eigenstates.
    pub fn matrix_element(&self, a: Label, op: &Operator3, b: Label) -> Complex64 {
        self.state(a).dotc(&(op * self.state(b)))
    }
}

fn hermitian_eigen(h: &Operator3) -> (Vector3<f64>, Operator3) {
    // Symmetrise first so round-off asymmetry never leaks into the solver.
    let sym = (h + h.adjoint()) * real(0.5);
    let eig = SymmetricEigen::new(sym);
    (eig.eigenvalues, eig.eigenvectors)
}

/// Eigen-decomposition with each eigenvector tagged by the Zeeman state it
/// overlaps most. Phases are fixed so the tagged component is real positive.
pub fn eig_adiabatic(h: &Operator3) -> Result<EigenSystem, SpinError> {
    check_hermitian(h)?;
    let (vals, vecs) = hermitian_eigen(h);

    let scale = vals.iter().map(|v| v.abs()).fold(max_abs(h), f64::max);
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (vals[i] - vals[j]).abs() <= DEGENERACY_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(SpinError::AdiabaticDegeneracy(format!(
                    "eigenvalues {} and {} coincide",
                    vals[i], vals[j]
                )));
            }
        }
    }

    // overlap[m][k] = |<m|v_k>|^2
    let overlap = |m: usize, k: usize| vecs[(m, k)].norm_sqr();
    let mut owner = [usize::MAX; 3];
    for (m, slot) in owner.iter_mut().enumerate() {
        let mut ranked: Vec<(usize, f64)> = (0..3).map(|k| (k, overlap(m, k))).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        if (ranked[0].1 - ranked[1].1).abs() <= 1e-12 {
            return Err(SpinError::AdiabaticDegeneracy(format!(
                "two eigenvectors share maximal overlap {:.6} with basis state {m}",
                ranked[0].1
            )));
        }
        *slot = ranked[0].0;
    }
    if owner[0] == owner[1] || owner[1] == owner[2] || owner[0] == owner[2] {
        return Err(SpinError::AdiabaticDegeneracy(
            "one eigenvector dominates two Zeeman states".into(),
        ));
    }

    let mut energies = [0.0; 3];
    let mut states = [State3::zeros(); 3];
    for m in 0..3 {
        let k = owner[m];
        let mut v: State3 = vecs.column(k).into_owned();
        let comp = v[m];
        v *= comp.conj() / comp.norm();
        energies[m] = vals[k];
        states[m] = v;
    }
    Ok(EigenSystem { energies, states })
}

/// exp(−i·H·t) for hermitian H, via its eigen-decomposition.
pub fn expm_hermitian(h: &Operator3, t: f64) -> Operator3 {
    let (vals, vecs) = hermitian_eigen(h);
    let phases = Operator3::from_diagonal(&vals.map(|l| Complex64::from_polar(1.0, -l * t)));
    vecs * phases * vecs.adjoint()
}

/// A Hamiltonian sampled in time, with a bound on its fastest frequency.
pub trait TimeDependentHamiltonian: Sync {
    fn at(&self, t: f64) -> Operator3;
    /// Fastest frequency (Hz) present in the dynamics.
    fn max_frequency(&self) -> f64;
}

/// Time-independent Hamiltonian.
#[derive(Debug, Clone)]
pub struct Static(pub Operator3);

impl TimeDependentHamiltonian for Static {
    fn at(&self, _t: f64) -> Operator3 {
        self.0
    }

    fn max_frequency(&self) -> f64 {
        let (vals, _) = hermitian_eigen(&self.0);
        (vals.max() - vals.min()) / std::f64::consts::TAU
    }
}

pub fn check_resolution(dt: f64, max_frequency: f64) -> Result<(), SpinError> {
    let limit = 1.0 / (MIN_STEPS_PER_PERIOD * max_frequency);
    if dt > limit {
        return Err(SpinError::UnderResolved { dt, freq: max_frequency, limit });
    }
    Ok(())
}

/// Propagator from `t0` to `t1` in `steps` equal slices; each slice uses the
/// Simpson average of H over the slice.
pub fn slice_propagator<H: TimeDependentHamiltonian + ?Sized>(
    h: &H,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Operator3 {
    let dt = (t1 - t0) / steps as f64;
    let mut u = Operator3::identity();
    let mut h_left = h.at(t0);
    for k in 0..steps {
        let a = t0 + k as f64 * dt;
        let h_mid = h.at(a + 0.5 * dt);
        let h_right = h.at(a + dt);
        let avg = (h_left + h_mid * real(4.0) + h_right) * real(1.0 / 6.0);
        u = expm_hermitian(&avg, dt) * u;
        h_left = h_right;
    }
    u
}

/// States at every point of `times`, starting from `psi0` at `times[0]`.
pub fn propagate<H: TimeDependentHamiltonian + ?Sized>(
    h: &H,
    psi0: &State3,
    times: &[f64],
    dt_max: f64,
) -> Result<Vec<State3>, SpinError> {
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) || !(dt_max > 0.0) {
        return Err(SpinError::BadTimeGrid);
    }
    check_resolution(dt_max, h.max_frequency())?;
    let mut out = Vec::with_capacity(times.len());
    let mut psi = *psi0;
    out.push(psi);
    for w in times.windows(2) {
        let steps = ((w[1] - w[0]) / dt_max).ceil().max(1.0) as usize;
        psi = slice_propagator(h, w[0], w[1], steps) * psi;
        out.push(psi);
    }
    Ok(out)
}

/// Uniformly sampled real-valued signal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeTrace {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, SpinError> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(SpinError::BadTimeGrid);
        }
        let dt = times[1] - times[0];
        let uniform = times
            .windows(2)
            .all(|w| w[1] > w[0] && ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(w[1].abs() * 1e-6));
        if !uniform {
            return Err(SpinError::BadTimeGrid);
        }
        Ok(Self { times, values })
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use proptest::strategy::ValueTree;

    fn close(a: &Operator3, b: &Operator3, tol: f64) -> bool {
        max_abs(&(a - b)) <= tol
    }

    #[test]
    fn cartesian_commutation_relations() {
        let s = spin1_operators();
        let i = c64(0.0, 1.0);
        assert!(close(&commutator(&s.sx, &s.sy), &(s.sz * i), 1e-14));
        assert!(close(&commutator(&s.sy, &s.sz), &(s.sx * i), 1e-14));
        assert!(close(&commutator(&s.sz, &s.sx), &(s.sy * i), 1e-14));
        let s2 = s.sx * s.sx + s.sy * s.sy + s.sz * s.sz;
        assert!(close(&s2, &(Operator3::identity() * real(2.0)), 1e-14));
    }

    #[test]
    fn t20_matrix() {
        let s = spin1_operators();
        let k = 1.0 / 6f64.sqrt();
        let want = Operator3::from_diagonal(&Vector3::new(real(k), real(-2.0 * k), real(k)));
        assert!(close(s.t2(0), &want, 1e-15));
    }

    #[test]
    fn spherical_tensor_symmetries() {
        let s = spin1_operators();
        for q in 1..=2i8 {
            let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
            assert!(close(&s.t2(q).adjoint(), &(s.t2(-q) * real(sign)), 1e-15), "q={q}");
            // [Sz, T2q] = q T2q
            assert!(close(&commutator(&s.sz, s.t2(q)), &(s.t2(q) * real(q as f64)), 1e-14));
        }
        // tensor components are traceless and orthogonal
        for p in -2..=2i8 {
            for q in -2..=2i8 {
                let ip = (s.t2(p).adjoint() * s.t2(q)).trace();
                if p == q {
                    assert!(ip.re > 0.5);
                } else {
                    assert!(ip.norm() < 1e-14, "p={p} q={q}");
                }
            }
            assert!(s.t2(p).trace().norm() < 1e-15);
        }
    }

    #[test]
    fn zeeman_labels_are_trivial() {
        let s = spin1_operators();
        let eig = eig_adiabatic(&(s.sz * real(3.0))).unwrap();
        assert_eq!(eig.energies, [3.0, 0.0, -3.0]);
        for l in Label::ALL {
            assert!((eig.state(l)[l.index()] - real(1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_field_degeneracy_is_rejected() {
        let s = spin1_operators();
        let h = s.sz * s.sz;
        assert!(matches!(eig_adiabatic(&h), Err(SpinError::AdiabaticDegeneracy(_))));
        assert!(matches!(eig_adiabatic(&Operator3::zeros()), Err(SpinError::AdiabaticDegeneracy(_))));
    }

    #[test]
    fn non_hermitian_is_rejected() {
        let s = spin1_operators();
        assert!(matches!(eig_adiabatic(&s.s_plus), Err(SpinError::NotHermitian(_))));
    }

    #[test]
    fn expm_of_sz() {
        let s = spin1_operators();
        let u = expm_hermitian(&s.sz, 0.3);
        assert!((u[(0, 0)] - Complex64::from_polar(1.0, -0.3)).norm() < 1e-15);
        assert!((u[(2, 2)] - Complex64::from_polar(1.0, 0.3)).norm() < 1e-15);
    }

    #[test]
    fn static_propagation_matches_expm() {
        let s = spin1_operators();
        let h = s.sz * real(2.0) + s.sx * real(0.7);
        let psi0 = State3::new(real(1.0), real(0.0), real(0.0));
        let times: Vec<f64> = (0..11).map(|k| k as f64 * 0.1).collect();
        let out = propagate(&Static(h), &psi0, &times, 0.01).unwrap();
        let exact = expm_hermitian(&h, 1.0) * psi0;
        assert!((out[10] - exact).norm() < 1e-12);
    }

    #[test]
    fn under_resolved_step_is_rejected() {
        let s = spin1_operators();
        let h = Static(s.sz * real(std::f64::consts::TAU * 1e9));
        let psi0 = State3::new(real(1.0), real(0.0), real(0.0));
        let err = propagate(&h, &psi0, &[0.0, 1e-9], 1e-10).unwrap_err();
        assert!(matches!(err, SpinError::UnderResolved { .. }));
    }

    #[test]
    fn trace_requires_uniform_grid() {
        assert!(TimeTrace::new(vec![0.0, 1.0, 2.5], vec![0.0; 3]).is_err());
        assert!(TimeTrace::new(vec![0.0, 1.0, 2.0], vec![0.0; 3]).is_ok());
    }

    fn random_hermitian() -> impl Strategy<Value = Operator3> {
        proptest::collection::vec(-1.0f64..1.0, 9).prop_map(|v| {
            let mut h = Operator3::zeros();
            h[(0, 0)] = real(v[0]);
            h[(1, 1)] = real(v[1]);
            h[(2, 2)] = real(v[2]);
            let pairs = [(0, 1), (0, 2), (1, 2)];
            for (k, &(i, j)) in pairs.iter().enumerate() {
                h[(i, j)] = c64(v[3 + 2 * k], v[4 + 2 * k]);
                h[(j, i)] = h[(i, j)].conj();
            }
            h
        })
    }

    struct Driven {
        h0: Operator3,
        h1: Operator3,
        omega: f64,
    }

    impl TimeDependentHamiltonian for Driven {
        fn at(&self, t: f64) -> Operator3 {
            self.h0 + self.h1 * real((self.omega * t).cos())
        }
        fn max_frequency(&self) -> f64 {
            (6.0 + self.omega) / std::f64::consts::TAU
        }
    }

    /// Independent route: trigonometric roots of the characteristic cubic and
    /// null vectors from row cross products.
    fn reference_eigen(a: &Operator3) -> Vec<(f64, State3)> {
        let q = a.trace().re / 3.0;
        let p1 = a[(0, 1)].norm_sqr() + a[(0, 2)].norm_sqr() + a[(1, 2)].norm_sqr();
        let p2 = (0..3).map(|i| (a[(i, i)].re - q).powi(2)).sum::<f64>() + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = (a - Operator3::identity() * real(q)) / real(p);
        let r = (b.determinant().re / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let l1 = q + 2.0 * p * phi.cos();
        let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let l2 = 3.0 * q - l1 - l3;
        [l1, l2, l3]
            .iter()
            .map(|&l| {
                let m = a - Operator3::identity() * real(l);
                let rows: Vec<State3> = (0..3).map(|i| m.row(i).transpose()).collect();
                let cross = |x: &State3, y: &State3| {
                    State3::new(x[1] * y[2] - x[2] * y[1], x[2] * y[0] - x[0] * y[2], x[0] * y[1] - x[1] * y[0])
                };
                let v = [cross(&rows[0], &rows[1]), cross(&rows[0], &rows[2]), cross(&rows[1], &rows[2])]
                    .into_iter()
                    .max_by(|x, y| x.norm().total_cmp(&y.norm()))
                    .unwrap();
                (l, v.normalize())
            })
            .collect()
    }

    #[test]
    fn three_level_rabi_transfer() {
        // rotation by θ = ω₁t about x: |⟨−1|e^{−iθSx}|+1⟩|² = sin⁴(θ/2)
        let s = spin1_operators();
        let w1 = 2.0;
        let psi0 = State3::new(real(1.0), real(0.0), real(0.0));
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
        let out = propagate(&Static(s.sx * real(w1)), &psi0, &times, 0.01).unwrap();
        for (t, psi) in times.iter().zip(&out) {
            let want = (w1 * t / 2.0).sin().powi(4);
            assert!((psi[2].norm_sqr() - want).abs() < 1e-12, "t={t}");
            assert!((psi.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weakly_perturbed_zeeman_labels() {
        let s = spin1_operators();
        let mut runner = proptest::test_runner::TestRunner::deterministic();
        for _ in 0..200 {
            let v = random_hermitian().new_tree(&mut runner).unwrap().current();
            let h = s.sz + v * real(0.08);
            let eig = eig_adiabatic(&h).unwrap();
            // perturbation theory: level m sits at m + O(0.08)
            for l in Label::ALL {
                assert!((eig.energy(l) - l.m() as f64).abs() < 0.3);
            }
            let mut oracle = reference_eigen(&h);
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0));
            for (l, (val, vec)) in Label::ALL.iter().zip(&oracle) {
                assert!((eig.energy(*l) - val).abs() < 1e-12);
                assert!((eig.state(*l).dotc(vec).norm() - 1.0).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn eigen_reconstructs(h in random_hermitian()) {
            if let Ok(eig) = eig_adiabatic(&h) {
                for l in Label::ALL {
                    let v = eig.state(l);
                    let resid = h * v - v * real(eig.energy(l));
                    prop_assert!(resid.norm() < 1e-12);
                    prop_assert!((v.norm() - 1.0).abs() < 1e-12);
                    for m in Label::ALL {
                        if m != l {
                            prop_assert!(v.dotc(eig.state(m)).norm() < 1e-12);
                        }
                    }
                }
            }
        }

        #[test]
        fn labels_stable_under_tiny_perturbation(h in random_hermitian(), d in random_hermitian()) {
            if let Ok(a) = eig_adiabatic(&h) {
                let gap = (a.energies[0] - a.energies[1]).abs().min((a.energies[1] - a.energies[2]).abs());
                prop_assume!(gap > 1e-3);
                let b = eig_adiabatic(&(h + d * real(1e-9))).unwrap();
                for l in Label::ALL {
                    prop_assert!((a.energy(l) - b.energy(l)).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn propagation_is_unitary(h0 in random_hermitian(), h1 in random_hermitian(), omega in 0.5f64..5.0) {
            let drive = Driven { h0, h1, omega };
            let psi0 = State3::new(real(0.6), c64(0.0, 0.8), real(0.0));
            let times: Vec<f64> = (0..6).map(|k| k as f64 * 0.5).collect();
            let out = propagate(&drive, &psi0, &times, 0.005).unwrap();
            for psi in &out {
                prop_assert!((psi.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn halving_step_changes_populations_little(h0 in random_hermitian(), h1 in random_hermitian(), omega in 0.5f64..5.0) {
            let drive = Driven { h0, h1, omega };
            let psi0 = State3::new(real(1.0), real(0.0), real(0.0));
            let times = [0.0, 2.0];
            let a = propagate(&drive, &psi0, &times, 0.001).unwrap();
            let b = propagate(&drive, &psi0, &times, 0.0005).unwrap();
            for k in 0..3 {
                prop_assert!((a[1][k].norm_sqr() - b[1][k].norm_sqr()).abs() < 1e-6);
            }
        }
    }
}
