//! Feller–Watanabe rescaling: mass divided by `k`, space by `√k`, time by `k`.

use crate::envelope::ParticleField;
use crate::error::{invalid, Result};
use std::collections::BTreeMap;
use std::io::{self, Write};

/// `k⁻¹ Σ_x φ(x/√k) Y(x)`.
pub fn feller_scale(field: &ParticleField, k: f64, phi: impl Fn(f64) -> f64) -> f64 {
    let s = k.sqrt();
    field.iter().map(|(x, c)| phi(x as f64 / s) * c as f64).sum::<f64>() / k
}

/// Rescaled density `X^k(t, x) = Y_{⌊kt⌋}(√k x)/√k`, piecewise linear
/// between the grid points `ℤ/√k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySnapshot {
    pub k: f64,
    pub t: f64,
    values: BTreeMap<i64, f64>,
}

pub fn density_snapshot(field: &ParticleField, k: f64, generation: usize) -> Result<DensitySnapshot> {
    if !(k > 0.0 && k.is_finite()) {
        return invalid(format!("scale must be positive, got {k}"));
    }
    let s = k.sqrt();
    Ok(DensitySnapshot {
        k,
        t: generation as f64 / k,
        values: field.iter().map(|(x, c)| (x, c as f64 / s)).collect(),
    })
}

impl DensitySnapshot {
    fn grid_value(&self, i: i64) -> f64 {
        self.values.get(&i).copied().unwrap_or(0.0)
    }

    /// Interpolated density at rescaled position `x`.
    pub fn value(&self, x: f64) -> f64 {
        let u = x * self.k.sqrt();
        let i = u.floor();
        let f = u - i;
        let i = i as i64;
        self.grid_value(i) * (1.0 - f) + self.grid_value(i + 1) * f
    }

    /// Grid points `(site/√k, value)` with nonzero value.
    pub fn grid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let s = self.k.sqrt();
        self.values.iter().map(move |(&i, &v)| (i as f64 / s, v))
    }

    /// Exact integral of the interpolant.
    pub fn integral(&self) -> f64 {
        self.values.values().sum::<f64>() / self.k.sqrt()
    }

    /// Snapshot rows `t,x,density`.
    pub fn write_csv(&self, w: &mut impl Write, header: bool) -> io::Result<()> {
        if header {
            writeln!(w, "t,x,density")?;
        }
        for (x, v) in self.grid() {
            writeln!(w, "{},{x},{v}", self.t)?;
        }
        Ok(())
    }
}

/// `λ_t(x) = (Y_{t-1}(x-1) + Y_{t-1}(x) + Y_{t-1}(x+1))/3`.
pub fn lambda(prev: &ParticleField, x: i64) -> f64 {
    prev.neighbour_mean(x)
}

/// One atom of the martingale measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmAtom {
    pub t: usize,
    pub x: i64,
    pub y: u64,
    pub lambda: f64,
    /// `(y - λ)/k`.
    pub delta: f64,
}

/// Martingale-measure atoms of a trajectory, normalised by `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmIncrements {
    pub k: f64,
    pub atoms: Vec<MmAtom>,
}

impl MmIncrements {
    /// Sum of the atoms of generation `t`.
    pub fn generation_sum(&self, t: usize) -> f64 {
        self.atoms.iter().filter(|a| a.t == t).map(|a| a.delta).sum()
    }
}

/// Atoms at every `(t, x)`, `t ≥ 1`, with `λ_t(x) > 0` or `Y_t(x) > 0`.
pub fn mm_increments(generations: &[ParticleField], k: f64) -> Result<MmIncrements> {
    if !(k > 0.0 && k.is_finite()) {
        return invalid(format!("normaliser must be positive, got {k}"));
    }
    let mut atoms = Vec::new();
    for (t, w) in generations.windows(2).enumerate() {
        let (prev, cur) = (&w[0], &w[1]);
        let mut sites = prev.neighbourhood();
        sites.extend(cur.iter().map(|(x, _)| x));
        sites.sort_unstable();
        sites.dedup();
        for x in sites {
            let lambda = lambda(prev, x);
            let y = cur.get(x);
            atoms.push(MmAtom {
                t: t + 1,
                x,
                y,
                lambda,
                delta: (y as f64 - lambda) / k,
            });
        }
    }
    Ok(MmIncrements { k, atoms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::brw_step;
    use crate::offspring::OffspringLaw;
    use crate::rng::Key;
    use crate::stats::MeanSe;
    use proptest::prelude::*;

    #[test]
    fn feller_scale_examples() {
        let f = ParticleField::point(2, 8);
        assert_eq!(feller_scale(&f, 4.0, |x| x), 2.0);
        let g = ParticleField::from_counts([(0, 3), (5, 9)]);
        assert_eq!(feller_scale(&g, 4.0, |_| 1.0), 3.0);
    }

    proptest! {
        #[test]
        fn feller_scale_is_linear(
            a in prop::collection::vec((-20i64..20, 1u64..50), 0..10),
            b in prop::collection::vec((-20i64..20, 1u64..50), 0..10),
            k in 1.0f64..100.0,
        ) {
            let fa = ParticleField::from_counts(a.clone());
            let fb = ParticleField::from_counts(b.clone());
            let fab = ParticleField::from_counts(a.into_iter().chain(b));
            let phi = |x: f64| (x * 1.3).sin() + 2.0;
            let psi = |x: f64| x * x;
            let lhs = feller_scale(&fab, k, phi);
            let rhs = feller_scale(&fa, k, phi) + feller_scale(&fb, k, phi);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            let mix = feller_scale(&fa, k, |x| 2.0 * phi(x) - psi(x));
            let sep = 2.0 * feller_scale(&fa, k, phi) - feller_scale(&fa, k, psi);
            prop_assert!((mix - sep).abs() <= 1e-9 * (1.0 + mix.abs()));
        }

        #[test]
        fn snapshot_is_nonnegative_and_integrates_to_mass(
            a in prop::collection::vec((-30i64..30, 1u64..40), 1..12),
            k in 1.0f64..400.0,
            xs in prop::collection::vec(-40.0f64..40.0, 20),
        ) {
            let f = ParticleField::from_counts(a);
            let snap = density_snapshot(&f, k, 0).unwrap();
            prop_assert!((snap.integral() - feller_scale(&f, k, |_| 1.0)).abs() < 1e-9 * f.total() as f64);
            for x in xs {
                prop_assert!(snap.value(x) >= 0.0);
            }
        }
    }

    #[test]
    fn snapshot_examples() {
        let s = density_snapshot(&ParticleField::point(0, 1), 1.0, 0).unwrap();
        assert_eq!(s.value(0.0), 1.0);
        assert_eq!(s.value(0.5), 0.5);
        assert_eq!(s.value(1.0), 0.0);
        assert_eq!(s.value(-1.5), 0.0);
        let s = density_snapshot(&ParticleField::point(2, 6), 4.0, 8).unwrap();
        assert_eq!(s.value(1.0), 3.0);
        assert_eq!(s.t, 2.0);
    }

    #[test]
    fn trapezoid_integral_matches_closed_form() {
        let f = ParticleField::from_counts([(-3, 2), (0, 5), (1, 1), (7, 4)]);
        let k = 9.0;
        let snap = density_snapshot(&f, k, 0).unwrap();
        // midpoint rule on a fine grid is exact for piecewise linear functions
        // whose breakpoints lie on the coarse grid
        let h = 1.0 / 3.0 / 64.0;
        let mut num = 0.0;
        let mut x = -5.0 / 3.0;
        while x < 9.0 / 3.0 {
            num += snap.value(x + h / 2.0) * h;
            x += h;
        }
        assert!((num - 12.0 / 9.0).abs() < 1e-9);
        assert!((snap.integral() - 12.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_test_function_against_snapshot() {
        let f = ParticleField::block(-30, 30, 5);
        let k = 100.0;
        let phi = |x: f64| (-x * x).exp();
        let snap = density_snapshot(&f, k, 0).unwrap();
        let h = 1e-3;
        let mut quad = 0.0;
        let mut x = -5.0;
        while x < 5.0 {
            quad += phi(x + h / 2.0) * snap.value(x + h / 2.0) * h;
            x += h;
        }
        let direct = feller_scale(&f, k, phi);
        // ‖φ'‖ ≤ 1, grid spacing 1/√k
        assert!((quad - direct).abs() < 1.0 / k.sqrt());
    }

    #[test]
    fn lambda_example() {
        let prev = ParticleField::point(0, 3);
        let cur = ParticleField::new();
        let mm = mm_increments(&[prev, cur], 1.0).unwrap();
        for a in &mm.atoms {
            assert_eq!(a.lambda, if a.x.abs() <= 1 { 1.0 } else { 0.0 });
        }
        assert_eq!(mm.atoms.len(), 3);
    }

    #[test]
    fn increments_are_centred_with_poisson_variance_and_orthogonal() {
        let prev = ParticleField::from_counts([(0, 4), (1, 2)]);
        let root = Key::root(31);
        let (mut m0, mut m1, mut var0, mut cov) =
            (MeanSe::new(), MeanSe::new(), MeanSe::new(), MeanSe::new());
        let (l0, l1) = (lambda(&prev, 0), lambda(&prev, 1));
        for r in 0..200_000 {
            let cur = brw_step(&prev, OffspringLaw::PoissonLimit, root.replicate(r), 0);
            let d0 = cur.get(0) as f64 - l0;
            let d1 = cur.get(1) as f64 - l1;
            m0.push(d0);
            m1.push(d1);
            var0.push(d0 * d0);
            cov.push(d0 * d1);
        }
        assert!(m0.z_score(0.0) < 4.0);
        assert!(m1.z_score(0.0) < 4.0);
        assert!(var0.z_score(l0) < 4.0);
        assert!(cov.z_score(0.0) < 4.0);
    }
}
