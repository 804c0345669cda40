use serde::{Deserialize, Serialize};

use super::Spectrogram;
use crate::error::{Error, Result};

/// Per-channel energy normalisation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcenParams {
    /// Smoother coefficient `s`.
    pub smoothing: f64,
    /// Gain exponent `alpha`.
    pub gain: f64,
    /// Bias `delta`.
    pub bias: f64,
    /// Root compression exponent `r`.
    pub power: f64,
    pub eps: f64,
}

impl Default for PcenParams {
    fn default() -> Self {
        PcenParams {
            smoothing: 0.025,
            gain: 0.98,
            bias: 2.0,
            power: 0.5,
            eps: 1e-6,
        }
    }
}

impl PcenParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.smoothing > 0.0
            && self.smoothing <= 1.0
            && (0.0..=1.0).contains(&self.gain)
            && self.bias >= 0.0
            && self.power > 0.0
            && self.power <= 1.0
            && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "invalid PCEN parameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// `M[t] = (1-s) M[t-1] + s E[t]` with `M[0] = E[0]`, then
/// `(E / (eps + M)^alpha + delta)^r - delta^r`, per channel.
pub fn pcen(mel_spec: &Spectrogram, params: &PcenParams) -> Result<Spectrogram> {
    params.validate()?;
    let PcenParams {
        smoothing: s,
        gain: alpha,
        bias: delta,
        power: r,
        eps,
    } = *params;
    let offset = delta.powf(r);
    let nb = mel_spec.n_bins;
    let mut out = vec![0.0; mel_spec.values.len()];
    let mut smooth: Vec<f64> = if mel_spec.n_frames > 0 {
        mel_spec.frame(0).to_vec()
    } else {
        Vec::new()
    };
    for t in 0..mel_spec.n_frames {
        let frame = mel_spec.frame(t);
        for b in 0..nb {
            let e = frame[b];
            if t > 0 {
                smooth[b] = (1.0 - s) * smooth[b] + s * e;
            }
            let v = (e / (eps + smooth[b]).powf(alpha) + delta).powf(r) - offset;
            out[t * nb + b] = v.max(0.0);
        }
    }
    Ok(Spectrogram {
        values: out,
        ..mel_spec.clone()
    })
}

/// `log(v + floor)` shifted so the minimum over the whole matrix is zero.
pub fn log_compress(spec: &Spectrogram, floor: f64) -> Spectrogram {
    let logged: Vec<f64> = spec.values.iter().map(|&v| (v + floor).ln()).collect();
    let min = logged.iter().copied().fold(f64::INFINITY, f64::min);
    let min = if min.is_finite() { min } else { 0.0 };
    Spectrogram {
        values: logged.iter().map(|v| v - min).collect(),
        ..spec.clone()
    }
}
