//! Noise processes of the interferometer: common-mode white amplitude noise
//! with spectral density S(f) = eta * 2 hbar omega_t * P0, and the lumped
//! shot-noise phase jitter accumulated during the hold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{laser_angular_frequency, HBAR, K_B, TIME_UNIT};

/// Default tweezer laser wavelength [m]; the shot-noise anchors are
/// consistent with 1064 nm.
pub const DEFAULT_LAMBDA_T: f64 = 1064e-9;
/// Default hold depth [uK] during the phase-accumulation stage.
pub const DEFAULT_HOLD_DEPTH_UK: f64 = 8.6;

/// Parameters of the noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Common-mode intensity noise power relative to shot noise.
    pub eta: f64,
    /// Tweezer optical power [W].
    pub p0: f64,
    /// Tweezer laser angular frequency [rad/s].
    pub omega_t: f64,
    /// Hold duration [s].
    pub hold_t: f64,
    /// Tweezer depth during the hold [uK].
    pub hold_depth_uk: f64,
    /// Master seed for noise streams.
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            eta: 0.0,
            p0: 100e-6,
            omega_t: laser_angular_frequency(DEFAULT_LAMBDA_T),
            hold_t: 10.0,
            hold_depth_uk: DEFAULT_HOLD_DEPTH_UK,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) {
            return Err(Error::invalid(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.p0 > 0.0) {
            return Err(Error::invalid(format!("P0 must be > 0, got {}", self.p0)));
        }
        if !(self.omega_t > 0.0) {
            return Err(Error::invalid(format!("omega_t must be > 0, got {}", self.omega_t)));
        }
        if !(self.hold_t > 0.0) {
            return Err(Error::invalid(format!("hold_T must be > 0, got {}", self.hold_t)));
        }
        if !(self.hold_depth_uk > 0.0) {
            return Err(Error::invalid(format!(
                "hold depth must be > 0, got {}",
                self.hold_depth_uk
            )));
        }
        Ok(())
    }

    /// Spectral density of the common-mode power noise S(f) [W^2/Hz].
    pub fn power_spectral_density(&self) -> f64 {
        self.eta * 2.0 * HBAR * self.omega_t * self.p0
    }

    /// RMS relative depth fluctuation per simulation step of length `dt`
    /// (internal time): white noise band-limited to the step Nyquist
    /// frequency 1/(2 dt), expressed as delta_P/P0.
    pub fn amplitude_noise_sigma(&self, dt: f64) -> f64 {
        let dt_s = dt * TIME_UNIT;
        (self.power_spectral_density() / (2.0 * dt_s)).sqrt() / self.p0
    }

    /// Relative shot-noise phase (delta_phi / Phi) = sqrt(2 hbar omega_t /
    /// (T P0)).
    pub fn relative_shot_noise(&self) -> f64 {
        (2.0 * HBAR * self.omega_t / (self.hold_t * self.p0)).sqrt()
    }

    /// Differential phase accumulated over the hold, Phi = V_hold T / hbar.
    pub fn hold_phase(&self) -> f64 {
        K_B * self.hold_depth_uk * 1e-6 * self.hold_t / HBAR
    }

    /// Standard deviation of the lumped shot-noise phase [rad].
    pub fn shot_noise_sigma(&self) -> f64 {
        self.relative_shot_noise() * self.hold_phase()
    }
}

/// Zero-mean Gaussian shot-noise phase draw [rad].
pub fn shot_noise_phase(spec: &NoiseSpec, rng: &mut impl rand::Rng) -> f64 {
    let sigma = spec.shot_noise_sigma();
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).unwrap().sample(rng)
}

/// I.i.d. zero-mean Gaussian relative depth fluctuations, one per step of
/// length `dt` (internal time). Reproducible bit-exact from `seed`.
pub fn amplitude_noise_stream(spec: &NoiseSpec, dt: f64, n_steps: usize, seed: u64) -> Vec<f64> {
    let sigma = spec.amplitude_noise_sigma(dt);
    if sigma == 0.0 {
        return vec![0.0; n_steps];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    (0..n_steps).map(|_| normal.sample(&mut rng)).collect()
}
