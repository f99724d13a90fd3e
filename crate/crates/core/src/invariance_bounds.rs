//! Lower envelope of `psi' >= -lambda psi^eta` over a sampling interval.

use crate::barrier::ETA_ONE_TOL;
use crate::error::{Error, Result};

fn check_args(psi0: f64, lambda: f64, eta: f64, dt: f64) -> Result<()> {
    if psi0.is_nan() || psi0 < 0.0 {
        return Err(Error::Domain(format!(
            "comparison bound needs a nonnegative initial value, got {psi0}"
        )));
    }
    if !(lambda > 0.0 && eta > 0.0 && dt >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "comparison bound needs lambda > 0, eta > 0, dt >= 0 (got {lambda}, {eta}, {dt})"
        )));
    }
    Ok(())
}

/// Solution at `dt` of `y' = -lambda y^eta`, `y(0) = psi0`, which bounds any
/// `psi` obeying `psi' >= -lambda psi^eta` from below.
pub fn comparison_lower_bound(psi0: f64, lambda: f64, eta: f64, dt: f64) -> Result<f64> {
    Ok(psi0 + comparison_decrement(psi0, lambda, eta, dt)?)
}

/// `comparison_lower_bound(..) - psi0`, computed without cancellation for small
/// `dt`.
pub fn comparison_decrement(psi0: f64, lambda: f64, eta: f64, dt: f64) -> Result<f64> {
    check_args(psi0, lambda, eta, dt)?;
    if psi0 == 0.0 || dt == 0.0 {
        return Ok(0.0);
    }
    if (eta - 1.0).abs() <= ETA_ONE_TOL {
        return Ok(psi0 * (-lambda * dt).exp_m1());
    }
    // y(dt) = psi0 * (1 - lambda (1 - eta) dt psi0^(eta - 1))^(1 / (1 - eta))
    let one_minus = 1.0 - eta;
    let z = -lambda * one_minus * dt * psi0.powf(eta - 1.0);
    if z <= -1.0 {
        return Ok(-psi0);
    }
    let ratio_m1 = (z.ln_1p() / one_minus).exp_m1();
    Ok((psi0 * ratio_m1).max(-psi0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(comparison_lower_bound(1.0, 2.0, 1.0, 0.0).unwrap(), 1.0);
        let v = comparison_lower_bound(1.0, 1.0, 2.0, 0.5).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(comparison_lower_bound(1.0, 2.0, 0.5, 2.0).unwrap(), 0.0);
        let v = comparison_lower_bound(2.0, 0.5, 1.0, 1.0).unwrap();
        assert!((v - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_and_extinct_cases() {
        assert_eq!(comparison_lower_bound(0.0, 2.0, 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(comparison_lower_bound(0.0, 2.0, 3.0, 1.0).unwrap(), 0.0);
        // sqrt decay hits zero at t = 2 sqrt(psi0) / lambda
        assert_eq!(comparison_lower_bound(4.0, 1.0, 0.5, 4.0).unwrap(), 0.0);
        assert!(comparison_lower_bound(4.0, 1.0, 0.5, 3.9).unwrap() > 0.0);
    }

    #[test]
    fn rejects_invalid_arguments() {
        assert!(matches!(
            comparison_lower_bound(-1e-3, 1.0, 1.0, 0.1),
            Err(Error::Domain(_))
        ));
        assert!(comparison_lower_bound(1.0, 0.0, 1.0, 0.1).is_err());
        assert!(comparison_lower_bound(1.0, 1.0, 0.0, 0.1).is_err());
        assert!(comparison_lower_bound(1.0, 1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn near_linear_eta_is_continuous() {
        let base = comparison_lower_bound(3.0, 2.0, 1.0, 0.7).unwrap();
        for eta in [1.0 - 1e-6, 1.0 + 1e-6, 1.0 + 1e-13] {
            let v = comparison_lower_bound(3.0, 2.0, eta, 0.7).unwrap();
            assert!((v - base).abs() < 1e-4, "eta={eta}");
        }
    }

    #[test]
    fn decrement_is_accurate_for_tiny_steps() {
        let d = comparison_decrement(10.0, 2.0, 1.0, 1e-9).unwrap();
        assert!((d / 1e-9 + 20.0).abs() < 1e-6);
        let d = comparison_decrement(10.0, 2.0, 1.5, 1e-9).unwrap();
        assert!((d / 1e-9 + 2.0 * 10f64.powf(1.5)).abs() < 1e-5);
    }
}
