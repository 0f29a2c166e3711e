//! JSON experiment configuration: schema, validation with field context,
//! and construction of the core model types.

use fbmsde::model::{
    DelayLinearDrift, DiagHolderSigma, FunctionalModelSpec, IdentitySigma, LinearDrift, ModelSpec,
    TanhDrift, ZeroDrift,
};
use fbmsde::{Grid, Hurst, VecSeries};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentKind {
    Gradient,
    ShiftTest,
    Harnack,
    LogHarnack,
    MomentScan,
    ValidateOperators,
    SfdeGradient,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub preset: String,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub amp: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaConfig {
    pub preset: String,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub alpha0: Option<f64>,
}

fn default_sigma() -> SigmaConfig {
    SigmaConfig {
        preset: "IDENTITY".into(),
        eps: None,
        alpha0: None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub drift: DriftConfig,
    #[serde(default = "default_sigma")]
    pub sigma: SigmaConfig,
    pub hurst: f64,
    pub horizon: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// SFDE only: delay and constant initial-segment value.
    #[serde(default)]
    pub r0: Option<f64>,
    #[serde(default)]
    pub xi0: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    pub n: usize,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub v: Option<Vec<f64>>,
    #[serde(default)]
    pub v_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub fd_step: Option<f64>,
    #[serde(default)]
    pub payoff: Option<String>,
    #[serde(default)]
    pub lambda0: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelConfig,
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error at `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

pub const DRIFT_PRESETS: [&str; 4] = ["ZERO", "LINEAR", "TANH_BOUNDED", "DELAY_LINEAR"];
pub const SIGMA_PRESETS: [&str; 2] = ["IDENTITY", "DIAG_HOLDER"];
pub const PAYOFFS: [&str; 3] = ["COORDINATE", "SQUARE", "ONE_PLUS_TANH"];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| err("<json>", format!("line {}: {}", e.line(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !DRIFT_PRESETS.contains(&self.model.drift.preset.as_str()) {
            return Err(err(
                "model.drift.preset",
                format!(
                    "unknown preset `{}` (expected one of {:?})",
                    self.model.drift.preset, DRIFT_PRESETS
                ),
            ));
        }
        if !SIGMA_PRESETS.contains(&self.model.sigma.preset.as_str()) {
            return Err(err(
                "model.sigma.preset",
                format!(
                    "unknown preset `{}` (expected one of {:?})",
                    self.model.sigma.preset, SIGMA_PRESETS
                ),
            ));
        }
        let h = self.model.hurst;
        if !(h > 0.0 && h < 1.0) {
            return Err(err("model.hurst", "must lie in (0, 1)"));
        }
        if h == 0.5 && self.experiment != ExperimentKind::ValidateOperators {
            return Err(err(
                "model.hurst",
                "H = 0.5 is supported only by VALIDATE_OPERATORS",
            ));
        }
        if !(self.model.horizon > 0.0) {
            return Err(err("model.horizon", "must be positive"));
        }
        if self.numerics.n < 2 {
            return Err(err("numerics.n", "need at least 2 grid intervals"));
        }
        if let Some(p) = &self.numerics.payoff {
            if !PAYOFFS.contains(&p.as_str()) {
                return Err(err(
                    "numerics.payoff",
                    format!("unknown payoff `{p}` (expected one of {PAYOFFS:?})"),
                ));
            }
        }
        let delay_drift = self.model.drift.preset == "DELAY_LINEAR";
        let sfde = self.experiment == ExperimentKind::SfdeGradient;
        if sfde != delay_drift {
            return Err(err(
                "model.drift.preset",
                "SFDE_GRADIENT requires (and is required by) the DELAY_LINEAR preset",
            ));
        }
        if sfde {
            let r0 = self.model.r0.ok_or_else(|| err("model.r0", "required for SFDE"))?;
            if !(r0 > 0.0 && r0 < self.model.horizon) {
                return Err(err("model.r0", "need 0 < r0 < horizon"));
            }
            let steps = r0 / self.model.horizon * self.numerics.n as f64;
            if (steps - steps.round()).abs() > 1e-9 || steps < 1.0 {
                return Err(err(
                    "numerics.n",
                    "grid spacing must divide the delay r0 exactly",
                ));
            }
        } else if self.model.x0.as_ref().map(|v| v.is_empty()).unwrap_or(true) {
            return Err(err("model.x0", "required and non-empty for SDE experiments"));
        }
        match self.experiment {
            ExperimentKind::Harnack | ExperimentKind::LogHarnack => {
                if self.numerics.v_grid.as_ref().map(|v| v.is_empty()).unwrap_or(true) {
                    return Err(err("numerics.v_grid", "required for Harnack experiments"));
                }
                if let Some(p) = self.numerics.p {
                    if p <= 1.0 {
                        return Err(err("numerics.p", "need p > 1"));
                    }
                }
            }
            ExperimentKind::MomentScan => {
                if self.numerics.lambda_grid.as_ref().map(|v| v.is_empty()).unwrap_or(true) {
                    return Err(err("numerics.lambda_grid", "required for MOMENT_SCAN"));
                }
                if self.numerics.v_grid.as_ref().map(|v| v.is_empty()).unwrap_or(true) {
                    return Err(err("numerics.v_grid", "required for MOMENT_SCAN"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.model.x0.as_ref().map(|v| v.len()).unwrap_or(1)
    }

    pub fn direction(&self) -> Vec<f64> {
        self.numerics
            .v
            .clone()
            .unwrap_or_else(|| vec![1.0; self.dim()])
    }

    /// Build the SDE model (panics on DELAY_LINEAR; callers dispatch first).
    pub fn sde_model(&self) -> Result<ModelSpec, ConfigError> {
        let d = self.dim();
        let (drift, k): (Arc<dyn fbmsde::model::Drift>, f64) =
            match self.model.drift.preset.as_str() {
                "ZERO" => (Arc::new(ZeroDrift { dim: d }), 0.0),
                "LINEAR" => {
                    let kappa = self.model.drift.kappa.unwrap_or(1.0);
                    (Arc::new(LinearDrift::scalar(d, kappa)), kappa.abs())
                }
                "TANH_BOUNDED" => {
                    let amp = self.model.drift.amp.unwrap_or(1.0);
                    let slope = self.model.drift.kappa.unwrap_or(1.0);
                    (
                        Arc::new(TanhDrift { amp, slope, dim: d }),
                        (amp * slope).abs(),
                    )
                }
                other => {
                    return Err(err("model.drift.preset", format!("`{other}` is not an SDE preset")))
                }
            };
        let sigma = self.sigma_schedule(d)?;
        let model = ModelSpec {
            drift,
            sigma,
            lipschitz_k: k,
            grad_holder_beta: 1.0,
            hurst: Hurst::new(self.model.hurst).map_err(|e| err("model.hurst", e.to_string()))?,
            horizon: self.model.horizon,
            x0: self.model.x0.clone().unwrap(),
            lambda0_override: self.numerics.lambda0,
        };
        model.validate().map_err(|e| err("model", e.to_string()))?;
        Ok(model)
    }

    pub fn sfde_model(&self) -> Result<FunctionalModelSpec, ConfigError> {
        let d = 1;
        let r0 = self.model.r0.unwrap();
        let xi0 = self.model.xi0.unwrap_or(1.0);
        let kappa = self.model.drift.kappa.unwrap_or(1.0);
        let seg = (r0 / self.model.horizon * self.numerics.n as f64).round() as usize;
        let seg_grid =
            Grid::new(-r0, 0.0, seg.max(2)).map_err(|e| err("model.r0", e.to_string()))?;
        let mut xi = VecSeries::zeros(seg_grid, d);
        for k in 0..=seg.max(2) {
            xi.set_node(k, &[xi0]);
        }
        let model = FunctionalModelSpec {
            drift: Arc::new(DelayLinearDrift { kappa, dim: d }),
            sigma: self.sigma_schedule(d)?,
            lipschitz_k: kappa.abs(),
            hurst: Hurst::new(self.model.hurst).map_err(|e| err("model.hurst", e.to_string()))?,
            horizon: self.model.horizon,
            delay: r0,
            initial_segment: xi,
        };
        model.validate().map_err(|e| err("model", e.to_string()))?;
        Ok(model)
    }

    fn sigma_schedule(&self, d: usize) -> Result<Arc<dyn fbmsde::model::Sigma>, ConfigError> {
        Ok(match self.model.sigma.preset.as_str() {
            "IDENTITY" => Arc::new(IdentitySigma { dim: d }),
            "DIAG_HOLDER" => Arc::new(DiagHolderSigma {
                dim: d,
                eps: self.model.sigma.eps.unwrap_or(0.5),
                alpha0: self.model.sigma.alpha0.unwrap_or(0.6),
            }),
            other => {
                return Err(err("model.sigma.preset", format!("unknown preset `{other}`")))
            }
        })
    }

    pub fn payoff(&self) -> impl Fn(&[f64]) -> f64 + Sync + Copy {
        let kind = match self.numerics.payoff.as_deref() {
            Some("SQUARE") => 1u8,
            Some("ONE_PLUS_TANH") => 2,
            _ => 0,
        };
        move |x: &[f64]| match kind {
            1 => x[0] * x[0],
            2 => 1.0 + x[0].tanh(),
            _ => x[0],
        }
    }
}
