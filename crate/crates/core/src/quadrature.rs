//! Gauss-Legendre nodes and weights.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes (ascending) and weights of the `r`-point rule on `[-1, 1]`.
pub fn gauss_legendre(r: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if r == 0 {
        return Err(Error::InvalidArgument(
            "quadrature needs at least one node".into(),
        ));
    }
    let mut nodes = vec![0.0; r];
    let mut weights = vec![0.0; r];
    let n = r as f64;
    for i in 0..r.div_ceil(2) {
        // Tricomi's initial guess, then Newton on P_r
        let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(r, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(r, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[r - 1 - i] = x;
        weights[i] = w;
        weights[r - 1 - i] = w;
    }
    if r % 2 == 1 {
        nodes[r / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// `(P_r(x), P_r'(x))` by the three-term recurrence.
fn legendre(r: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if r == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=r {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = r as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Node fractions `gamma_i` of the `r`-point rule mapped to `[0, 1]`.
pub fn unit_nodes(r: usize) -> Result<Vec<f64>> {
    Ok(gauss_legendre(r)?
        .0
        .iter()
        .map(|x| 0.5 * (x + 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_rule() {
        let g = unit_nodes(3).unwrap();
        let a = 0.5 - 0.5 * (0.6f64).sqrt();
        assert!((g[0] - a).abs() < 1e-15);
        assert_eq!(g[1], 0.5);
        assert!((g[2] - (1.0 - a)).abs() < 1e-15);
        assert!((g[0] - 0.112702).abs() < 1e-6);
        let (_, w) = gauss_legendre(3).unwrap();
        assert!((w[0] - 5.0 / 9.0).abs() < 1e-15);
        assert!((w[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn rules_integrate_polynomials_exactly() {
        for r in 1..=10 {
            let (x, w) = gauss_legendre(r).unwrap();
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for deg in 0..2 * r {
                let quad: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((quad - exact).abs() < 1e-13, "r={r} deg={deg}");
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
        assert!(gauss_legendre(0).is_err());
    }
}
