//! Exit probabilities of the super-Brownian limit from an interval.
//!
//! `P(range ⊂ (0, a) | X_0 = μ) = exp(-⟨μ, u⟩)` where `u'' = c u²` on
//! `(0, a)` with `u → ∞` at both ends. For the rescaled Poisson envelope the
//! spatial motion has variance 2/3 per unit time and the branching variance
//! is 1, so `(1/3) u'' = u²/2`, that is `c = 3/2` ([`ENVELOPE_C`]).
//!
//! The boundary value problem is solved by shooting from the midpoint with an
//! adaptive Dormand–Prince integrator; once `u` is large the remaining
//! distance to the blow-up point is summed from its asymptotic series. The
//! same solution is `u(x) = (36/c) ℘(√6 x)` for the equianharmonic lattice
//! with real period `√6 a`, which [`weierstrass_p`] evaluates independently.

use crate::error::{invalid, Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Coefficient `c` in `u'' = c u²` for the rescaled Poisson envelope.
pub const ENVELOPE_C: f64 = 1.5;

/// Integrate until `u` exceeds this multiple of the midpoint value.
const SWITCH_FACTOR: f64 = 1e3;
const RTOL: f64 = 1e-13;
const ATOL: f64 = 1e-15;

/// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

type State = [f64; 2];

fn rhs(c: f64, y: State) -> State {
    [y[1], c * y[0] * y[0]]
}

/// One Dormand–Prince step; returns the new state and the error estimate.
fn dp_step(c: f64, y: State, h: f64) -> (State, f64) {
    let mut k = [[0.0; 2]; 7];
    for i in 0..7 {
        let mut yi = y;
        for (j, kj) in k.iter().enumerate().take(i) {
            yi[0] += h * A[i][j] * kj[0];
            yi[1] += h * A[i][j] * kj[1];
        }
        k[i] = rhs(c, yi);
    }
    let mut y5 = y;
    let mut err = 0.0f64;
    for d in 0..2 {
        let mut hi = 0.0;
        let mut lo = 0.0;
        for i in 0..7 {
            hi += B5[i] * k[i][d];
            lo += B4[i] * k[i][d];
        }
        y5[d] = y[d] + h * hi;
        let scale = ATOL + RTOL * y[d].abs().max(y5[d].abs());
        err = err.max((h * (hi - lo)).abs() / scale);
    }
    (y5, err)
}

/// Outcome of integrating outward from the midpoint.
enum Stop {
    /// Reached the requested distance.
    At(State),
    /// `u` exceeded the threshold at distance `s`.
    Blown { s: f64, state: State },
}

/// Integrate `(u, u')` from `(u0, 0)` over distance `s_max`, stopping early
/// once `u ≥ u_stop`.
fn integrate(c: f64, u0: f64, s_max: f64, u_stop: f64) -> Result<Stop> {
    let mut y = [u0, 0.0];
    let mut s = 0.0;
    let mut h = (0.01 / (c * u0).sqrt()).min(s_max.max(1e-300));
    for _ in 0..1_000_000 {
        if y[0] >= u_stop {
            return Ok(Stop::Blown { s, state: y });
        }
        if s >= s_max {
            return Ok(Stop::At(y));
        }
        let step = h.min(s_max - s);
        let (next, err) = dp_step(c, y, step);
        if err <= 1.0 {
            s += step;
            y = next;
            if s_max - s < 1e-15 * s_max {
                s = s_max;
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = step * factor;
    }
    Err(Error::NonConvergence {
        what: "ODE integration step limit".into(),
        residual: f64::NAN,
    })
}

/// Distance from a point with `u = big` to the blow-up, given the energy
/// constant `E = u'²/2 - c u³/3`.
fn tail_distance(c: f64, big: f64, energy: f64) -> f64 {
    // u'² = (2c/3) u³ (1 - β/u³) with β = -3E/c; expand (1 - β/u³)^{-1/2}
    let beta = -3.0 * energy / c;
    let pref = (3.0 / (2.0 * c)).sqrt();
    let mut sum = 0.0;
    let mut coef = 1.0;
    let x = beta / big.powi(3);
    let mut xp = 1.0;
    for k in 0..60 {
        let term = coef * xp / (0.5 + 3.0 * k as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        coef *= (2 * k + 1) as f64 / (2 * k + 2) as f64;
        xp *= x;
    }
    pref * sum / big.sqrt()
}

/// Solution of `u'' = c u²` on `(0, a)` with infinite boundary values.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitProfile {
    pub a: f64,
    pub c: f64,
    /// Value at the midpoint, the minimum of `u`.
    pub u_mid: f64,
    /// Distance from the midpoint at which the asymptotic layer takes over.
    switch_distance: f64,
    switch_state: State,
    /// `|blow-up distance - a/2|` at the accepted midpoint value.
    pub residual: f64,
}

/// Shooting from the midpoint: find `u(a/2)` such that the solution with
/// `u'(a/2) = 0` blows up at distance `a/2`.
pub fn solve_exit_ode(a: f64, c: f64) -> Result<ExitProfile> {
    if !(a > 0.0 && a.is_finite()) {
        return invalid(format!("interval length must be positive, got {a}"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return invalid(format!("coefficient must be positive, got {c}"));
    }
    let half = a / 2.0;
    let blowup = |u0: f64| -> Result<(f64, f64, State)> {
        match integrate(c, u0, f64::INFINITY, SWITCH_FACTOR * u0)? {
            Stop::Blown { s, state } => {
                let energy = state[1] * state[1] / 2.0 - c * state[0].powi(3) / 3.0;
                Ok((s + tail_distance(c, state[0], energy), s, state))
            }
            Stop::At(_) => unreachable!("unbounded integration stops only at blow-up"),
        }
    };
    // the blow-up distance behaves like K/√u0; iterate on that form
    let mut u0 = 1.0 / (c * half * half);
    for _ in 0..100 {
        let (dist, s, state) = blowup(u0)?;
        let next = u0 * (dist / half).powi(2);
        let residual = (dist - half).abs();
        if residual <= 1e-14 * half || ((next - u0) / u0).abs() < 1e-15 {
            return Ok(ExitProfile {
                a,
                c,
                u_mid: u0,
                switch_distance: s,
                switch_state: state,
                residual,
            });
        }
        u0 = next;
    }
    let (dist, _, _) = blowup(u0)?;
    Err(Error::NonConvergence {
        what: "midpoint shooting".into(),
        residual: (dist - half).abs(),
    })
}

impl ExitProfile {
    /// `u(x)` for `x ∈ (0, a)`.
    pub fn value(&self, x: f64) -> Result<f64> {
        if !(x > 0.0 && x < self.a) {
            return invalid(format!("x = {x} outside (0, {})", self.a));
        }
        let s = (x - self.a / 2.0).abs();
        if s <= self.switch_distance {
            return match integrate(self.c, self.u_mid, s, f64::INFINITY)? {
                Stop::At(y) => Ok(y[0]),
                Stop::Blown { .. } => unreachable!("no stopping threshold"),
            };
        }
        // invert the asymptotic tail: find U with tail_distance(U) = a/2 - s
        let st = self.switch_state;
        let energy = st[1] * st[1] / 2.0 - self.c * st[0].powi(3) / 3.0;
        let target = self.a / 2.0 - s;
        let mut u = 6.0 / (self.c * target * target);
        for _ in 0..200 {
            let d = tail_distance(self.c, u, energy);
            // d(U) ≈ K U^{-1/2}: multiplicative update
            let next = u * (d / target).powi(2);
            if ((next - u) / u).abs() < 1e-15 {
                return Ok(next);
            }
            u = next;
        }
        Err(Error::NonConvergence {
            what: "boundary layer inversion".into(),
            residual: (tail_distance(self.c, u, energy) - target).abs(),
        })
    }

    /// `(x, u(x))` at `points` equally spaced interior grid points.
    pub fn grid(&self, points: usize) -> Result<Vec<(f64, f64)>> {
        (1..=points)
            .map(|i| {
                let x = self.a * i as f64 / (points + 1) as f64;
                Ok((x, self.value(x)?))
            })
            .collect()
    }
}

/// Hexagonal lattice `ω1 ℤ + ω2 ℤ` with `ω1 = √6 a` real and
/// `ω2 = ω1 e^{iπ/3}`, the period lattice of the exit profile on `(0, a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquianharmonicLattice {
    pub omega1: f64,
    pub omega2: Complex64,
}

impl EquianharmonicLattice {
    pub fn for_interval(a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return invalid(format!("interval length must be positive, got {a}"));
        }
        let omega1 = 6f64.sqrt() * a;
        Ok(Self {
            omega1,
            omega2: Complex64::from_polar(omega1, PI / 3.0),
        })
    }

    fn tau(&self) -> Complex64 {
        self.omega2 / self.omega1
    }

    fn nome(&self) -> Complex64 {
        (Complex64::i() * 2.0 * PI * self.tau()).exp()
    }

    /// `1 + s Σ_{n≥1} σ_p(n) qⁿ` truncated once terms fall below `1e-18`.
    fn eisenstein(&self, p: u32, s: f64) -> Complex64 {
        let q = self.nome();
        let mut acc = Complex64::new(1.0, 0.0);
        let mut qn = Complex64::new(1.0, 0.0);
        for n in 1..200u64 {
            qn *= q;
            let sigma: f64 = (1..=n).filter(|d| n % d == 0).map(|d| (d as f64).powi(p as i32)).sum();
            let term = qn * (s * sigma);
            acc += term;
            if term.norm() < 1e-18 * acc.norm() {
                break;
            }
        }
        acc
    }

    /// Invariant `g2 = 60 Σ' ω^{-4}`.
    pub fn g2(&self) -> Complex64 {
        let e4 = self.eisenstein(3, 240.0);
        60.0 * PI.powi(4) / 45.0 * e4 / self.omega1.powi(4)
    }

    /// Invariant `g3 = 140 Σ' ω^{-6}`.
    pub fn g3(&self) -> Complex64 {
        let e6 = self.eisenstein(5, -504.0);
        140.0 * 2.0 * PI.powi(6) / 945.0 * e6 / self.omega1.powi(6)
    }

    /// Nearest lattice point to `z`.
    fn reduce(&self, z: Complex64) -> Complex64 {
        // coordinates in the basis (ω1, ω2)
        let n2 = (z.im / self.omega2.im).round();
        let rest = z - self.omega2 * n2;
        let n1 = (rest.re / self.omega1).round();
        let mut best = self.omega2 * n2 + n1 * self.omega1;
        for d1 in -1..=1 {
            for d2 in -1..=1 {
                let w = self.omega2 * (n2 + d2 as f64) + (n1 + d1 as f64) * self.omega1;
                if (z - w).norm() < (z - best).norm() {
                    best = w;
                }
            }
        }
        best
    }
}

/// Weierstrass `℘(z)` summed row by row:
/// `℘(z) = (π/ω1)² [Σ_n csc²(π(z + n ω2)/ω1) - E2(τ)/3]`.
pub fn weierstrass_p(z: Complex64, lattice: &EquianharmonicLattice) -> Result<Complex64> {
    let w = lattice.reduce(z);
    if (z - w).norm() < 1e-12 * lattice.omega1 {
        return Err(Error::Pole(format!("℘ evaluated at lattice point {w}")));
    }
    // translate into the fundamental region around the origin
    let z = z - w;
    let k = PI / lattice.omega1;
    let csc2 = |u: Complex64| {
        let s = (u * k).sin();
        Complex64::new(1.0, 0.0) / (s * s)
    };
    let mut sum = csc2(z);
    for n in 1..200 {
        let shift = lattice.omega2 * n as f64;
        let term = csc2(z + shift) + csc2(z - shift);
        sum += term;
        if term.norm() < 1e-17 * sum.norm() {
            break;
        }
    }
    let e2 = lattice.eisenstein(1, -24.0);
    Ok(k * k * (sum - e2 / 3.0))
}

/// `u(x) = (36/c) ℘(√6 x)` on `(0, a)`.
pub fn weierstrass_profile(x: f64, a: f64, c: f64) -> Result<f64> {
    let lattice = EquianharmonicLattice::for_interval(a)?;
    let p = weierstrass_p(Complex64::new(6f64.sqrt() * x, 0.0), &lattice)?;
    Ok(36.0 / c * p.re)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitPrediction {
    pub probability: f64,
    /// `u(x_i)` for each initial point (`∞` outside the interval).
    pub u_values: Vec<f64>,
    /// Some mass sits outside `(0, a)`.
    pub outside: bool,
}

/// `exp(-Σ m_i u(x_i))` for point masses `(x_i, m_i)`.
pub fn exit_probability(initial: &[(f64, f64)], a: f64, c: f64) -> Result<ExitPrediction> {
    if let Some(&(x, m)) = initial.iter().find(|&&(_, m)| !(m >= 0.0 && m.is_finite())) {
        return invalid(format!("mass {m} at {x} must be finite and nonnegative"));
    }
    let profile = solve_exit_ode(a, c)?;
    let mut u_values = Vec::with_capacity(initial.len());
    let mut exponent = 0.0;
    let mut outside = false;
    for &(x, m) in initial {
        if x > 0.0 && x < a {
            let u = profile.value(x)?;
            u_values.push(u);
            exponent += m * u;
        } else {
            u_values.push(f64::INFINITY);
            outside |= m > 0.0;
        }
    }
    Ok(ExitPrediction {
        probability: if outside { 0.0 } else { (-exponent).exp() },
        u_values,
        outside,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `∫_1^∞ ds / √(s³ - 1)` with `s = 1 + w²`, `w = tan θ` and Simpson on `θ`.
    fn first_integral_constant() -> f64 {
        // s = 1 + w², ds = 2w dw, s³ - 1 = w²(3 + 3w² + w⁴)
        // integrand 2 / √(3 + 3w² + w⁴) over w ∈ (0, ∞); w = tan θ
        let f = |theta: f64| {
            let w = theta.tan();
            let sec2 = 1.0 + w * w;
            2.0 / (3.0 + 3.0 * w * w + w.powi(4)).sqrt() * sec2
        };
        composite_simpson(f, 0.0, PI / 2.0 - 1e-9, 200_000)
    }

    fn composite_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    /// Distance from the midpoint to the point where `u` reaches `v`, by
    /// quadrature of the first integral `u'² = (2c/3)(u³ - u0³)`.
    fn quadrature_distance(c: f64, u0: f64, v: f64) -> f64 {
        // u = u0 (1 + w²)
        let f = |w: f64| 2.0 / (3.0 + 3.0 * w * w + w.powi(4)).sqrt();
        let top = (v / u0 - 1.0).sqrt();
        (3.0 / (2.0 * c * u0)).sqrt() * composite_simpson(f, 0.0, top, 20_000)
    }

    #[test]
    fn midpoint_matches_first_integral() {
        let i = first_integral_constant();
        // B(1/6, 1/2)/3 = Γ(1/6)√π / (3Γ(2/3))
        assert!((i - 2.428_650_647_887_582).abs() < 1e-8, "{i}");
        for (a, c) in [(1.0, 1.0), (2.5, 1.5), (0.3, 4.0)] {
            let p = solve_exit_ode(a, c).unwrap();
            let u0 = 3.0 / (2.0 * c) * (2.0 * i / a).powi(2);
            assert!(((p.u_mid - u0) / u0).abs() < 1e-6);
            assert!((p.value(a / 2.0).unwrap() - p.u_mid).abs() < 1e-12 * p.u_mid);
        }
    }

    #[test]
    fn off_midpoint_values_match_quadrature() {
        let (a, c) = (1.0, 1.0);
        let p = solve_exit_ode(a, c).unwrap();
        for x in [0.45, 0.3, 0.1, 0.02] {
            let u = p.value(x).unwrap();
            let s = quadrature_distance(c, p.u_mid, u);
            assert!((s - (a / 2.0 - x)).abs() < 1e-6 * a, "x={x}");
        }
    }

    #[test]
    fn half_line_limit() {
        let p = solve_exit_ode(50.0, 1.0).unwrap();
        let u = p.value(1.0).unwrap();
        assert!((u - 6.0).abs() < 1e-4 * 6.0, "{u}");
        // 6/(c x²) solves the equation exactly
        let c = 1.5;
        let f = |x: f64| 6.0 / (c * x * x);
        let x = 0.7;
        let h = 1e-4;
        let second = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        assert!((second - c * f(x).powi(2)).abs() < 1e-5 * second);
    }

    #[test]
    fn symmetry_and_shape() {
        let p = solve_exit_ode(2.0, 1.5).unwrap();
        for s in [0.1, 0.5, 0.9, 0.99] {
            let l = p.value(1.0 - s).unwrap();
            let r = p.value(1.0 + s).unwrap();
            assert!((l - r).abs() <= 1e-10 * l);
        }
        let g = p.grid(41).unwrap();
        let mid = g.len() / 2;
        assert!(g[..=mid].windows(2).all(|w| w[1].1 < w[0].1));
        assert!(g[mid..].windows(2).all(|w| w[1].1 > w[0].1));
        assert!(g.iter().all(|&(_, u)| u > 0.0));
        assert!(p.value(1e-4).unwrap() > 1e7);
    }

    #[test]
    fn scaling_law() {
        let (a, lam) = (1.3, 2.7);
        let p = solve_exit_ode(a, 1.0).unwrap();
        let q = solve_exit_ode(lam * a, 1.0).unwrap();
        for x in [0.05, 0.3, 0.65, 1.1] {
            let lhs = q.value(lam * x).unwrap();
            let rhs = p.value(x).unwrap() / (lam * lam);
            assert!(((lhs - rhs) / rhs).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(solve_exit_ode(0.0, 1.0).is_err());
        assert!(solve_exit_ode(1.0, -1.0).is_err());
        let p = solve_exit_ode(1.0, 1.0).unwrap();
        assert!(p.value(0.0).is_err() && p.value(1.5).is_err());
    }

    /// Brute-force lattice sum over a large parallelogram.
    fn wp_brute(z: Complex64, l: &EquianharmonicLattice, r: i64) -> Complex64 {
        let mut s = Complex64::new(1.0, 0.0) / (z * z);
        for m in -r..=r {
            for n in -r..=r {
                if m == 0 && n == 0 {
                    continue;
                }
                let w = l.omega2 * n as f64 + m as f64 * l.omega1;
                s += Complex64::new(1.0, 0.0) / ((z - w) * (z - w)) - Complex64::new(1.0, 0.0) / (w * w);
            }
        }
        s
    }

    #[test]
    fn weierstrass_matches_brute_force_sum() {
        let l = EquianharmonicLattice::for_interval(1.0).unwrap();
        for z in [Complex64::new(0.3, 0.1), Complex64::new(1.2, -0.4), Complex64::new(0.5, 0.0)] {
            let fast = weierstrass_p(z, &l).unwrap();
            let slow = wp_brute(z, &l, 400);
            assert!((fast - slow).norm() < 1e-4 * fast.norm(), "{fast} vs {slow}");
        }
    }

    #[test]
    fn weierstrass_symmetries_and_invariants() {
        let l = EquianharmonicLattice::for_interval(0.8).unwrap();
        let z = Complex64::new(0.37, 0.21);
        let p = weierstrass_p(z, &l).unwrap();
        assert!((weierstrass_p(-z, &l).unwrap() - p).norm() < 1e-10 * p.norm());
        for w in [l.omega2, Complex64::new(l.omega1, 0.0), l.omega2.conj()] {
            assert!((weierstrass_p(z + w, &l).unwrap() - p).norm() < 1e-8 * p.norm());
        }
        assert!(l.g2().norm() <= 1e-8 * l.g3().norm());
        assert!(l.g3().re > 0.0);
        assert!(matches!(weierstrass_p(l.omega2, &l), Err(Error::Pole(_))));
        // differential equation ℘'² = 4℘³ - g3 via a centred difference
        let h = 1e-5;
        let dp = (weierstrass_p(z + h, &l).unwrap() - weierstrass_p(z - h, &l).unwrap()) / (2.0 * h);
        let rhs = 4.0 * p * p * p - l.g3();
        assert!((dp * dp - rhs).norm() < 1e-6 * rhs.norm());
    }

    #[test]
    fn weierstrass_and_ode_profiles_agree() {
        for (a, c) in [(1.0, 1.0), (2.5, ENVELOPE_C)] {
            let p = solve_exit_ode(a, c).unwrap();
            for i in 1..20 {
                let x = a * i as f64 / 20.0;
                let ode = p.value(x).unwrap();
                let wp = weierstrass_profile(x, a, c).unwrap();
                assert!(((ode - wp) / ode).abs() < 1e-8, "a={a} x={x}: {ode} vs {wp}");
            }
        }
    }

    #[test]
    fn exit_probability_rules() {
        let a = 2.0;
        let none = exit_probability(&[], a, 1.5).unwrap();
        assert_eq!(none.probability, 1.0);
        let zero = exit_probability(&[(1.0, 0.0)], a, 1.5).unwrap();
        assert_eq!(zero.probability, 1.0);
        let one = exit_probability(&[(0.7, 0.3), (1.2, 0.1)], a, 1.5).unwrap();
        let two = exit_probability(&[(0.7, 0.6), (1.2, 0.2)], a, 1.5).unwrap();
        assert!((two.probability - one.probability.powi(2)).abs() < 1e-15);
        let more = exit_probability(&[(0.7, 0.4), (1.2, 0.1)], a, 1.5).unwrap();
        assert!(more.probability <= one.probability);
        let out = exit_probability(&[(0.7, 0.3), (2.5, 0.1)], a, 1.5).unwrap();
        assert!(out.outside && out.probability == 0.0);
        assert!(exit_probability(&[(1.0, -1.0)], a, 1.5).is_err());
    }
}
