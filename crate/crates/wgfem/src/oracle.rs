//! Closed-form reference solutions for right-cylindrical cavities with
//! perfectly conducting walls and a uniform isotropic fill.
//!
//! These are the classical TE/TM cavity modes expressed through zeros of the
//! Bessel functions `J_m` and their derivatives; the FEM pipeline is
//! validated against them.

use crate::{Error, Result, SPEED_OF_LIGHT};

/// Mode family of a right-cylindrical cavity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CavityFamily {
    /// Transverse electric: radial index from zeros of `J_m'`; axial index `p >= 1`.
    Te,
    /// Transverse magnetic: radial index from zeros of `J_m`; axial index `p >= 0`.
    Tm,
}

/// One analytic cavity mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityMode {
    pub family: CavityFamily,
    /// Azimuthal index.
    pub m: u32,
    /// Radial index (1-based).
    pub n: u32,
    /// Axial index.
    pub p: u32,
    /// Resonance frequency [Hz].
    pub frequency: f64,
}

/// Evaluates `J_m(x)` for all orders `0..=m_max` by Miller's downward
/// recurrence, normalized with `J_0 + 2*sum J_{2k} = 1`.
fn bessel_j_table(m_max: usize, x: f64) -> Vec<f64> {
    if x == 0.0 {
        let mut out = vec![0.0; m_max + 1];
        out[0] = 1.0;
        return out;
    }
    let start = m_max + 20 + (1.5 * x.abs()) as usize;
    let start = start + start % 2; // even starting order
    let mut jp1 = 0.0_f64;
    let mut j = 1e-300_f64;
    let mut norm = 0.0_f64;
    let mut out = vec![0.0; m_max + 1];
    for k in (0..=start).rev() {
        let jm1 = (2.0 * (k as f64 + 1.0) / x) * j - jp1;
        jp1 = j;
        j = jm1;
        // jp1 now holds J_{k+1}, j holds J_k
        if k <= m_max {
            out[k] = j;
        }
        if k % 2 == 0 {
            norm += if k == 0 { j } else { 2.0 * j };
        }
        // rescale to avoid overflow
        if j.abs() > 1e250 {
            jp1 /= 1e250;
            j /= 1e250;
            norm /= 1e250;
            for v in out.iter_mut() {
                *v /= 1e250;
            }
        }
    }
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// `J_m(x)`.
pub fn bessel_j(m: u32, x: f64) -> f64 {
    bessel_j_table(m as usize + 1, x)[m as usize]
}

/// `J_m'(x)`.
pub fn bessel_j_prime(m: u32, x: f64) -> f64 {
    let t = bessel_j_table(m as usize + 1, x);
    if m == 0 {
        -t[1]
    } else {
        0.5 * (bessel_j(m - 1, x) - t[m as usize + 1])
    }
}

/// The n-th positive zero (n >= 1) of `J_m` (TM) or `J_m'` (TE).
///
/// Zeros are bracketed by a coarse scan (their spacing always exceeds the
/// scan step) and polished by bisection-safeguarded Newton iteration.
pub fn bessel_zero(family: CavityFamily, m: u32, n: u32) -> f64 {
    assert!(n >= 1, "radial index must be >= 1");
    // J_0' = -J_1, so the TE order-0 zeros are the TM order-1 zeros.
    if family == CavityFamily::Te && m == 0 {
        return bessel_zero(CavityFamily::Tm, 1, n);
    }
    let f = |x: f64| match family {
        CavityFamily::Tm => bessel_j(m, x),
        CavityFamily::Te => bessel_j_prime(m, x),
    };
    let step = 0.2_f64;
    let mut x = (m as f64).max(1e-3);
    // For TE and m >= 1, J_m' > 0 on (0, j'_{m,1}); for TM, J_m > 0 on (0, j_{m,1}).
    let mut found = 0u32;
    let mut prev = f(x);
    loop {
        let x2 = x + step;
        let cur = f(x2);
        if prev == 0.0 {
            found += 1;
            if found == n {
                return x;
            }
        } else if prev.signum() != cur.signum() {
            found += 1;
            if found == n {
                // bisection-safeguarded Newton on [x, x2]
                let (mut lo, mut hi) = (x, x2);
                let (mut flo, _) = (prev, cur);
                let mut z = 0.5 * (lo + hi);
                for _ in 0..100 {
                    let fz = f(z);
                    if fz == 0.0 {
                        break;
                    }
                    if fz.signum() == flo.signum() {
                        lo = z;
                        flo = fz;
                    } else {
                        hi = z;
                    }
                    let h = 1e-7;
                    let dfz = (f(z + h) - f(z - h)) / (2.0 * h);
                    let zn = z - fz / dfz;
                    z = if zn > lo && zn < hi { zn } else { 0.5 * (lo + hi) };
                    if hi - lo < 1e-14 * z {
                        break;
                    }
                }
                return z;
            }
        }
        x = x2;
        prev = cur;
        assert!(x < 1e4, "bessel zero scan ran away");
    }
}

/// Enumerates the cavity modes of azimuthal index `m` for a cylinder of
/// radius `a`, height `d`, filled with isotropic relative permittivity
/// `eps`, returning the `n_modes` lowest frequencies sorted ascending.
pub fn cylinder_modes(a: f64, d: f64, eps: f64, m: u32, n_modes: usize) -> Result<Vec<CavityMode>> {
    if a <= 0.0 || d <= 0.0 {
        return Err(Error::Validation("cylinder dimensions must be positive".into()));
    }
    if eps < 1.0 {
        return Err(Error::Validation("relative permittivity must be >= 1".into()));
    }
    let c = SPEED_OF_LIGHT / eps.sqrt();
    let freq = |chi: f64, p: u32| {
        (c / (2.0 * std::f64::consts::PI))
            * ((chi / a).powi(2) + (p as f64 * std::f64::consts::PI / d).powi(2)).sqrt()
    };
    let mut modes = Vec::new();
    // Generous index ranges; sorted + truncated below.
    let n_max = n_modes as u32 + 4;
    let p_max = n_modes as u32 + 4;
    for n in 1..=n_max {
        let chi_tm = bessel_zero(CavityFamily::Tm, m, n);
        for p in 0..=p_max {
            modes.push(CavityMode {
                family: CavityFamily::Tm,
                m,
                n,
                p,
                frequency: freq(chi_tm, p),
            });
        }
        let chi_te = bessel_zero(CavityFamily::Te, m, n);
        for p in 1..=p_max {
            modes.push(CavityMode {
                family: CavityFamily::Te,
                m,
                n,
                p,
                frequency: freq(chi_te, p),
            });
        }
    }
    modes.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    modes.truncate(n_modes);
    Ok(modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Interval-bisection oracle, wholly independent of the Newton path.
    fn bisect_zero(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo).signum() != f(hi).signum());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid).signum() == f(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn bessel_small_argument_series() {
        // J_0(0.5), J_1(0.5) from the power series, evaluated independently.
        let series = |m: u32, x: f64| {
            let mut sum = 0.0;
            let mut term = (x / 2.0_f64).powi(m as i32)
                / (1..=m).map(|k| k as f64).product::<f64>().max(1.0);
            let mut k = 0.0;
            while term.abs() > 1e-20 {
                sum += term;
                k += 1.0;
                term *= -(x / 2.0) * (x / 2.0) / (k * (k + m as f64));
            }
            sum
        };
        for &x in &[0.1, 0.5, 1.0, 3.0, 7.5] {
            for m in 0..6 {
                assert_relative_eq!(bessel_j(m, x), series(m, x), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zeros_match_bisection_oracle() {
        // (TM, 0, 1) -> 2.404826; (TE, 1, 1) -> 1.841184; (TM, 1, 1) -> 3.831706
        let z = bessel_zero(CavityFamily::Tm, 0, 1);
        assert_relative_eq!(z, bisect_zero(|x| bessel_j(0, x), 2.0, 3.0), max_relative = 1e-12);
        assert_relative_eq!(z, 2.404826, max_relative = 1e-6);

        let z = bessel_zero(CavityFamily::Te, 1, 1);
        assert_relative_eq!(z, bisect_zero(|x| bessel_j_prime(1, x), 1.0, 2.5), max_relative = 1e-12);
        assert_relative_eq!(z, 1.841184, max_relative = 1e-6);

        let z = bessel_zero(CavityFamily::Tm, 1, 1);
        assert_relative_eq!(z, bisect_zero(|x| bessel_j(1, x), 3.0, 4.0), max_relative = 1e-12);
        assert_relative_eq!(z, 3.831706, max_relative = 1e-6);
    }

    #[test]
    fn zeros_interlace() {
        for m in 0..8u32 {
            for n in 1..6u32 {
                assert!(
                    bessel_zero(CavityFamily::Tm, m, n) < bessel_zero(CavityFamily::Tm, m, n + 1)
                );
            }
            if m >= 1 {
                assert!(
                    bessel_zero(CavityFamily::Te, m, 1) < bessel_zero(CavityFamily::Tm, m, 1)
                );
            }
        }
    }

    #[test]
    fn unit_cylinder_lowest_modes() {
        let modes = cylinder_modes(1.0, 1.0, 1.0, 0, 1).unwrap();
        let tm010 = modes[0];
        assert_eq!(tm010.family, CavityFamily::Tm);
        assert_eq!((tm010.n, tm010.p), (1, 0));
        // f = c * x01 / (2 pi a), x01 = 2.404825558
        assert_relative_eq!(tm010.frequency, 1.147425278e8, max_relative = 1e-6);

        let modes = cylinder_modes(1.0, 1.0, 1.0, 1, 1).unwrap();
        let te111 = modes[0];
        assert_eq!(te111.family, CavityFamily::Te);
        assert_eq!((te111.n, te111.p), (1, 1));
        // f = (c / 2 pi) sqrt(x'11^2 + pi^2), x'11 = 1.841183781
        assert_relative_eq!(te111.frequency, 1.737422437e8, max_relative = 1e-6);
    }

    #[test]
    fn eps_scaling_halves_frequencies() {
        let v = cylinder_modes(1.0, 1.0, 1.0, 0, 8).unwrap();
        let d = cylinder_modes(1.0, 1.0, 4.0, 0, 8).unwrap();
        for (a, b) in v.iter().zip(&d) {
            assert_relative_eq!(b.frequency, 0.5 * a.frequency, max_relative = 1e-12);
        }
    }

    #[test]
    fn frequencies_monotone_in_indices() {
        let f = |n, p| {
            let chi = bessel_zero(CavityFamily::Tm, 2, n);
            ((chi / 0.7f64).powi(2) + (p as f64 * std::f64::consts::PI / 1.3).powi(2)).sqrt()
        };
        assert!(f(1, 0) < f(2, 0));
        assert!(f(1, 0) < f(1, 1));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(cylinder_modes(0.0, 1.0, 1.0, 0, 1).is_err());
        assert!(cylinder_modes(1.0, -1.0, 1.0, 0, 1).is_err());
        assert!(cylinder_modes(1.0, 1.0, 0.5, 0, 1).is_err());
    }
}
