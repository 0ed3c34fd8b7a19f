use crate::error::{invalid, Result};

/// Where a set of per-lag scale factors came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScaleProvenance {
    /// Closed-form NTK scaling of a linear RNN initialized with these
    /// variances.
    Analytic {
        nu_w: f64,
        nu_f: f64,
        nu_c: f64,
    },
    /// All ones: the plain (unscaled) convolutional model.
    Unit,
    Custom,
}

/// Positive per-lag weights `rho_0 .. rho_{T-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleVector {
    rho: Vec<f64>,
    provenance: ScaleProvenance,
}

impl ScaleVector {
    pub fn unit(steps: usize) -> Self {
        Self { rho: vec![1.0; steps], provenance: ScaleProvenance::Unit }
    }

    pub fn custom(rho: Vec<f64>) -> Result<Self> {
        Self::with_provenance(rho, ScaleProvenance::Custom)
    }

    pub(crate) fn with_provenance(rho: Vec<f64>, provenance: ScaleProvenance) -> Result<Self> {
        if rho.is_empty() {
            return Err(invalid("scale vector must be non-empty"));
        }
        if let Some((j, r)) = rho.iter().enumerate().find(|(_, r)| !(**r > 0.0 && r.is_finite())) {
            return Err(invalid(format!("scale factor rho_{j} = {r} is not a positive finite number")));
        }
        Ok(Self { rho, provenance })
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn provenance(&self) -> ScaleProvenance {
        self.provenance
    }

    /// Upper bound on the scale factors used by the implicit-bias
    /// constants: `nu_c (T nu_f + 1) + nu_f` for analytic scales, the plain
    /// maximum otherwise.
    pub fn rho_max(&self) -> f64 {
        match self.provenance {
            ScaleProvenance::Analytic { nu_f, nu_c, .. } => nu_c * (self.rho.len() as f64 * nu_f + 1.0) + nu_f,
            _ => self.rho.iter().cloned().fold(f64::MIN, f64::max),
        }
    }
}
