//! Network topology, wireless channel realizations and NOMA/OMA rates.
//!
//! Clients are dropped uniformly over a disk around the server. The
//! per-round power gain of client n is
//!
//! `|h_n|^2 = g0 * d_n^-alpha * f_n`
//!
//! with `g0` the free-space reference gain at 1 m for the configured
//! carrier (Friis), `alpha` the path-loss exponent and `f_n` a
//! unit-mean exponential fading factor (Rayleigh power fading) redrawn
//! each round. The uplink uses a single shared channel: under NOMA the
//! server decodes by SIC in descending received-power order; under OMA
//! clients are serialized in time and see no interference.

use rand::Rng;

use crate::error::{Error, Result};

/// Speed of light (m/s), for the Friis reference gain.
const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Radio-level constants of one experiment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    /// Channel bandwidth B (Hz).
    pub bandwidth_hz: f64,
    /// AWGN spectral density (dBm/Hz).
    pub noise_density_dbm_hz: f64,
    /// Path-loss exponent (unitless).
    pub path_loss_exponent: f64,
    /// Cell radius (m); clients are uniform over this disk.
    pub cell_radius_m: f64,
    /// Maximum transmit power per client (W).
    pub max_power_w: f64,
    /// Carrier frequency (Hz); sets the 1 m reference gain.
    pub carrier_frequency_hz: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            bandwidth_hz: 1e6,
            noise_density_dbm_hz: -174.0,
            path_loss_exponent: 3.76,
            cell_radius_m: 500.0,
            max_power_w: 0.01, // 10 dBm
            carrier_frequency_hz: 1e9,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("path_loss_exponent", self.path_loss_exponent),
            ("cell_radius_m", self.cell_radius_m),
            ("max_power_w", self.max_power_w),
            ("carrier_frequency_hz", self.carrier_frequency_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.noise_density_dbm_hz.is_finite() {
            return Err(Error::Config("noise_density_dbm_hz must be finite".into()));
        }
        Ok(())
    }

    /// Noise power over the configured bandwidth (W).
    pub fn noise_power_w(&self) -> f64 {
        noise_power(self.noise_density_dbm_hz, self.bandwidth_hz)
    }

    /// Free-space power gain at 1 m: `(c / (4 pi f_c))^2`.
    pub fn reference_gain(&self) -> f64 {
        let wavelength = SPEED_OF_LIGHT_M_S / self.carrier_frequency_hz;
        (wavelength / (4.0 * std::f64::consts::PI)).powi(2)
    }
}

/// Static client placement: distance of each client to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub client_distances_m: Vec<f64>,
}

impl NetworkTopology {
    pub fn n_clients(&self) -> usize {
        self.client_distances_m.len()
    }
}

/// One round's channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub round_index: usize,
    /// Linear power gains |h_n|^2, one per client.
    pub gains: Vec<f64>,
    /// Noise power sigma^2 over the channel bandwidth (W).
    pub noise_power_w: f64,
}

impl ChannelState {
    /// FNV-1a hash of the exact bit patterns; used to verify that runs
    /// which must share channel realizations actually do.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bits: u64| {
            for byte in bits.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        eat(self.round_index as u64);
        eat(self.noise_power_w.to_bits());
        for g in &self.gains {
            eat(g.to_bits());
        }
        h
    }
}

/// Convert a dBm/Hz spectral density over a bandwidth to watts:
/// `10^((density + 10 log10(B) - 30) / 10)`.
pub fn noise_power(density_dbm_hz: f64, bandwidth_hz: f64) -> f64 {
    debug_assert!(bandwidth_hz > 0.0, "bandwidth must be positive");
    10f64.powf((density_dbm_hz + 10.0 * bandwidth_hz.log10() - 30.0) / 10.0)
}

/// Drop `n_clients` uniformly over the disk of radius `cell_radius_m`
/// (radial density proportional to r). Deterministic given the rng.
pub fn sample_topology(
    n_clients: usize,
    params: &RadioParams,
    rng: &mut impl Rng,
) -> NetworkTopology {
    assert!(n_clients >= 1, "need at least one client");
    let distances = (0..n_clients)
        .map(|_| {
            // r = R sqrt(u); keep u away from 0 so distances stay positive
            let u: f64 = rng.gen::<f64>().max(1e-12);
            params.cell_radius_m * u.sqrt()
        })
        .collect();
    NetworkTopology { client_distances_m: distances }
}

/// Draw one round's gains: deterministic power law times unit-mean
/// exponential fading, redrawn per round.
pub fn sample_channel(
    topology: &NetworkTopology,
    params: &RadioParams,
    round_index: usize,
    rng: &mut impl Rng,
) -> ChannelState {
    assert!(topology.n_clients() > 0, "topology must be nonempty");
    let g0 = params.reference_gain();
    let gains = topology
        .client_distances_m
        .iter()
        .map(|&d| {
            // inverse-CDF exponential; u in [1e-300, 1) keeps -ln(u) in (0, ~691]
            let u: f64 = rng.gen::<f64>().max(1e-300);
            let fading = -u.ln();
            g0 * d.powf(-params.path_loss_exponent) * fading
        })
        .collect();
    ChannelState {
        round_index,
        gains,
        noise_power_w: params.noise_power_w(),
    }
}

/// SIC decoding order: clients sorted by received power `p_n |h_n|^2`
/// descending, ties broken by lower client index.
pub fn decoding_order(channel: &ChannelState, powers: &[f64]) -> Vec<usize> {
    assert_eq!(channel.gains.len(), powers.len(), "powers/gains length mismatch");
    let mut order: Vec<usize> = (0..powers.len()).collect();
    order.sort_by(|&a, &b| {
        let pa = powers[a] * channel.gains[a];
        let pb = powers[b] * channel.gains[b];
        pb.partial_cmp(&pa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    order
}

/// Per-client achievable NOMA rates (bit/s) under the given decoding
/// order. The client decoded at position i sees interference from all
/// clients decoded after it; the last-decoded client sees none.
/// Clients not in `order` get rate 0.
pub fn noma_rates(
    channel: &ChannelState,
    powers: &[f64],
    order: &[usize],
    params: &RadioParams,
) -> Result<Vec<f64>> {
    if order.is_empty() {
        return Err(Error::InvalidArgument("noma_rates: empty decoding order".into()));
    }
    assert_eq!(channel.gains.len(), powers.len(), "powers/gains length mismatch");

    let mut rates = vec![0.0; powers.len()];
    // running interference: received power of clients decoded after position i
    let mut interference = 0.0;
    for &n in order.iter().rev() {
        let received = powers[n] * channel.gains[n];
        let sinr = received / (interference + channel.noise_power_w);
        rates[n] = params.bandwidth_hz * sinr.ln_1p() / std::f64::consts::LN_2;
        interference += received;
    }
    Ok(rates)
}

/// Interference-free rate of a single client on the full bandwidth
/// (OMA: clients are serialized in time slots).
pub fn oma_rate(channel: &ChannelState, client: usize, power: f64, params: &RadioParams) -> f64 {
    let snr = power * channel.gains[client] / channel.noise_power_w;
    params.bandwidth_hz * snr.ln_1p() / std::f64::consts::LN_2
}
