//! Energy and GHG accounting in fixed point.
//!
//! Energy is kept in nano-kWh and emissions in femto-kg CO2-eq so that the
//! whole pipeline is integer arithmetic; only display rounds.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Power, horizon and grid intensity. Stored as integers: milliwatts,
/// seconds and micro-kg CO2-eq per kWh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarbonParams {
    pub power_mw: u64,
    pub horizon_s: u64,
    pub intensity_ukg_per_kwh: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CarbonError {
    #[error("cpu fraction {0} outside [0, 1]")]
    OutOfRangeCpu(f64),
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
}

impl Default for CarbonParams {
    fn default() -> Self {
        CarbonParams::new(0.06, 1.0, 0.540).expect("defaults are positive")
    }
}

impl CarbonParams {
    /// `power_kw` in kW, `horizon_hours` in hours, `intensity` in kg CO2-eq/kWh.
    pub fn new(power_kw: f64, horizon_hours: f64, intensity: f64) -> Result<Self, CarbonError> {
        let positive = |v: f64, name| {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(CarbonError::NonPositive(name))
            }
        };
        Ok(CarbonParams {
            power_mw: (positive(power_kw, "machine_power_kw")? * 1e6).round() as u64,
            horizon_s: (positive(horizon_hours, "horizon_hours")? * 3600.0).round() as u64,
            intensity_ukg_per_kwh: (positive(intensity, "ghg_intensity")? * 1e6).round() as u64,
        })
    }

    pub fn with_intensity(mut self, intensity: f64) -> Result<Self, CarbonError> {
        self.intensity_ukg_per_kwh = CarbonParams::new(1.0, 1.0, intensity)?.intensity_ukg_per_kwh;
        Ok(self)
    }

    pub fn power_kw(&self) -> f64 {
        self.power_mw as f64 / 1e6
    }

    pub fn horizon_hours(&self) -> f64 {
        self.horizon_s as f64 / 3600.0
    }

    pub fn intensity(&self) -> f64 {
        self.intensity_ukg_per_kwh as f64 / 1e6
    }

    /// Energy drawn at full load over the horizon.
    pub fn full_load_energy(&self) -> Energy {
        Energy::from_parts(self.power_mw, self.horizon_s, PPM)
    }
}

const PPM: u64 = 1_000_000;

/// CPU share in parts per million.
pub fn cpu_ppm(fraction: f64) -> Result<u64, CarbonError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CarbonError::OutOfRangeCpu(fraction));
    }
    Ok((fraction * PPM as f64).round() as u64)
}

/// Energy in nano-kWh.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Energy(pub u64);

impl Energy {
    /// mW * s * ppm / 3.6e6, rounded half up.
    fn from_parts(power_mw: u64, seconds: u64, ppm: u64) -> Energy {
        let num = power_mw as u128 * seconds as u128 * ppm as u128;
        Energy(((num + 1_800_000) / 3_600_000) as u64)
    }

    pub fn kwh(&self) -> f64 {
        self.0 as f64 / 1e9
    }

    /// Micro-kWh, rounded half up.
    pub fn micro_kwh(&self) -> u64 {
        (self.0 + 500) / 1000
    }
}

/// Emissions in femto-kg CO2-eq.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ghg(pub u128);

impl Ghg {
    pub fn kg(&self) -> f64 {
        self.0 as f64 / 1e15
    }

    /// Micro-kg, rounded half up.
    pub fn micro_kg(&self) -> u128 {
        (self.0 + 500_000_000) / 1_000_000_000
    }
}

impl fmt::Display for Ghg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}e-6", self.micro_kg())
    }
}

/// Energy for running at `cpu_fraction` of one machine over the horizon.
pub fn energy_for_operation(params: &CarbonParams, cpu_fraction: f64) -> Result<Energy, CarbonError> {
    Ok(Energy::from_parts(params.power_mw, params.horizon_s, cpu_ppm(cpu_fraction)?))
}

/// Same, for a CPU share already in ppm.
pub fn energy_for_ppm(params: &CarbonParams, ppm: u64) -> Result<Energy, CarbonError> {
    if ppm > PPM {
        return Err(CarbonError::OutOfRangeCpu(ppm as f64 / PPM as f64));
    }
    Ok(Energy::from_parts(params.power_mw, params.horizon_s, ppm))
}

/// Exact product of energy and intensity.
pub fn ghg_emission(energy: Energy, intensity_ukg_per_kwh: u64) -> Ghg {
    Ghg(energy.0 as u128 * intensity_ukg_per_kwh as u128)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> CarbonParams {
        CarbonParams::default()
    }

    #[test]
    fn fabric_and_quorum_energy() {
        assert_eq!(energy_for_operation(&p(), 0.00625).unwrap().micro_kwh(), 375);
        assert_eq!(energy_for_operation(&p(), 0.0065).unwrap().micro_kwh(), 390);
        assert_eq!(energy_for_operation(&p(), 0.0).unwrap(), Energy(0));
    }

    #[test]
    fn ghg_rounding() {
        let i = p().intensity_ukg_per_kwh;
        let e = energy_for_operation(&p(), 0.00625).unwrap();
        assert_eq!(ghg_emission(e, i).0, 202_500_000_000);
        assert_eq!(ghg_emission(e, i).micro_kg(), 203);
        assert_eq!(ghg_emission(Energy(366_000), i).micro_kg(), 198);
        assert_eq!(ghg_emission(Energy(0), i), Ghg(0));
    }

    #[test]
    fn out_of_range_cpu() {
        assert!(matches!(energy_for_operation(&p(), 1.5), Err(CarbonError::OutOfRangeCpu(_))));
        assert!(matches!(energy_for_operation(&p(), -0.1), Err(CarbonError::OutOfRangeCpu(_))));
    }

    #[test]
    fn params_must_be_positive() {
        assert_eq!(CarbonParams::new(0.0, 1.0, 0.5), Err(CarbonError::NonPositive("machine_power_kw")));
        assert!(p().with_intensity(-1.0).is_err());
        assert_eq!(p().with_intensity(0.4).unwrap().intensity_ukg_per_kwh, 400_000);
    }

    #[test]
    fn repeated_invocations_do_not_drift() {
        let one = ghg_emission(energy_for_operation(&p(), 0.0061).unwrap(), 540_000);
        let mut total = Ghg(0);
        for _ in 0..1_000_000 {
            total.0 += ghg_emission(energy_for_operation(&p(), 0.0061).unwrap(), 540_000).0;
        }
        assert_eq!(total.0, one.0 * 1_000_000);
    }
}
