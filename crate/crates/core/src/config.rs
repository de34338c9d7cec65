//! JSON experiment configuration: group, kernel, coefficients, domain,
//! time, sweep, reference and output sections, plus a small structured
//! expression tree for data fields (named presets or polynomial/trig
//! expressions).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientSet;
use crate::error::{Error, Result};
use crate::group::{BracketTerm, ScalarField, Smoothness, StratifiedGroup, TimeField};
use crate::kernel::KernelShape;
use crate::nonlocal::OperatorKind;
use crate::report::ReportFormat;
use crate::study::{SpacingRule, StudySetup, StudyThresholds};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub group: GroupConfig,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub coefficients: Option<CoeffConfig>,
    pub domain: DomainConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub operator: Option<OperatorConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub reference: Option<ReferenceConfig>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GroupConfig {
    Abelian { dimension: usize },
    Heisenberg,
    Custom {
        dimension: usize,
        strata: Vec<usize>,
        /// Triplets [i, j, k, c] with 1-based basis indices, i < j.
        structure_constants: Vec<(usize, usize, usize, f64)>,
    },
}

impl GroupConfig {
    pub fn build(&self) -> Result<StratifiedGroup> {
        match self {
            GroupConfig::Abelian { dimension } => {
                if *dimension == 0 {
                    return Err(Error::InvalidGroup("dimension must be positive".into()));
                }
                Ok(StratifiedGroup::abelian(*dimension))
            }
            GroupConfig::Heisenberg => Ok(StratifiedGroup::heisenberg()),
            GroupConfig::Custom { dimension, strata, structure_constants } => {
                if strata.iter().sum::<usize>() != *dimension {
                    return Err(Error::InvalidGroup(format!(
                        "strata {strata:?} do not sum to dimension {dimension}"
                    )));
                }
                let brackets = structure_constants
                    .iter()
                    .map(|&(i, j, k, c)| {
                        if i == 0 || j == 0 || k == 0 {
                            return Err(Error::InvalidGroup(
                                "structure constant indices are 1-based".into(),
                            ));
                        }
                        Ok(BracketTerm { i: i - 1, j: j - 1, k: k - 1, c })
                    })
                    .collect::<Result<Vec<_>>>()?;
                StratifiedGroup::new(strata.clone(), brackets)
            }
        }
    }
}

/// Load a group definition from its own JSON file.
pub fn load_group(path: &Path) -> Result<StratifiedGroup> {
    let text = std::fs::read_to_string(path)?;
    let cfg: GroupConfig = serde_json::from_str(&text)?;
    cfg.build()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelConfig {
    pub shape: String,
    #[serde(rename = "R")]
    pub radius: f64,
    pub nodes: usize,
}

impl KernelConfig {
    pub fn shape(&self) -> Result<KernelShape> {
        match self.shape.as_str() {
            "indicator" => Ok(KernelShape::Indicator),
            "quartic-bump" => Ok(KernelShape::QuarticBump),
            "truncated-gaussian" => Ok(KernelShape::TruncatedGaussian),
            other => Err(Error::Config(format!("unknown kernel shape '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffConfig {
    pub mode: String,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub a: Option<Vec<Vec<FieldExpr>>>,
    #[serde(default)]
    pub b: Option<Vec<FieldExpr>>,
    #[serde(default)]
    pub a_scalar: Option<FieldExpr>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub m: Option<f64>,
}

impl CoeffConfig {
    pub fn build(&self, group: &StratifiedGroup) -> Result<CoefficientSet> {
        let beta = self.beta.unwrap_or(1.0);
        let mut cs = match (self.mode.as_str(), &self.preset) {
            (_, Some(name)) => CoefficientSet::preset(name, group)?,
            ("anisotropic-drift", None) => {
                let a = self
                    .a
                    .as_ref()
                    .ok_or_else(|| Error::Config("anisotropic-drift needs 'a'".into()))?;
                let b = self
                    .b
                    .as_ref()
                    .ok_or_else(|| Error::Config("anisotropic-drift needs 'b'".into()))?;
                let a_fields = a
                    .iter()
                    .map(|row| row.iter().map(|e| e.build()).collect())
                    .collect();
                let b_fields = b.iter().map(|e| e.build()).collect();
                CoefficientSet::anisotropic(group, a_fields, b_fields, beta)?
            }
            ("fokker-planck", None) => {
                let a = self
                    .a_scalar
                    .as_ref()
                    .ok_or_else(|| Error::Config("fokker-planck needs 'a_scalar'".into()))?;
                CoefficientSet::fokker_planck(group, a.build())
            }
            (other, None) => {
                return Err(Error::Config(format!("unknown coefficient mode '{other}'")))
            }
        };
        if let Some(m) = self.m {
            cs.set_positivity(m);
        }
        Ok(cs)
    }

    /// The scalar field of a Fokker-Planck configuration.
    pub fn scalar_field(&self, group: &StratifiedGroup) -> Result<ScalarField> {
        if let Some(name) = &self.preset {
            return match name.as_str() {
                "fokker-planck-demo" => Ok(ScalarField::new(|x: &[f64]| 2.0 + x[0].sin())),
                other => Err(Error::Config(format!("preset '{other}' has no scalar field"))),
            };
        }
        let _ = group;
        self.a_scalar
            .as_ref()
            .map(|e| e.build())
            .ok_or_else(|| Error::Config("fokker-planck needs 'a_scalar'".into()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainConfig {
    /// Axis-aligned box as [lo, hi] pairs.
    #[serde(rename = "box")]
    pub bounds: Vec<(f64, f64)>,
    #[serde(default)]
    pub h: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_outputs")]
    pub outputs: usize,
}

fn default_outputs() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub kind: String,
    pub epsilon: f64,
}

pub fn operator_kind(name: &str) -> Result<OperatorKind> {
    match name {
        "convolution" => Ok(OperatorKind::Convolution),
        "drift-diffusion" => Ok(OperatorKind::DriftDiffusion),
        "fokker-planck" => Ok(OperatorKind::FokkerPlanck),
        other => Err(Error::Config(format!("unknown operator kind '{other}'"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub operator: String,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub min_slope: Option<f64>,
    #[serde(default)]
    pub max_residual: Option<f64>,
    #[serde(default)]
    pub require_decreasing: Option<bool>,
    #[serde(default)]
    pub enforce_subdominance: Option<bool>,
    /// Fixed grid spacing; omits the subordinate h <= eps^2/4 rule.
    #[serde(default)]
    pub fixed_h: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub h_ref: f64,
    #[serde(default)]
    pub dt_ref: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into(), "gnuplot".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    pub u0: FieldExpr,
    pub g: TimeFieldExpr,
}

/// A small structured expression tree over the coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "kebab-case")]
pub enum FieldExpr {
    Const { value: f64 },
    Coord { axis: usize },
    /// amplitude * sin(freq * x_axis + phase)
    Sin {
        axis: usize,
        #[serde(default = "one")]
        freq: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Cos {
        axis: usize,
        #[serde(default = "one")]
        freq: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// coeffs[0] + coeffs[1] x + coeffs[2] x^2 + ... along one axis.
    Poly { axis: usize, coeffs: Vec<f64> },
    /// exp(-|x - center|^2 / (2 width^2))
    Gauss { center: Vec<f64>, width: f64 },
    Sum { terms: Vec<FieldExpr> },
    Prod { factors: Vec<FieldExpr> },
    Preset { name: String },
}

fn one() -> f64 {
    1.0
}

impl FieldExpr {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FieldExpr::Const { value } => *value,
            FieldExpr::Coord { axis } => x[*axis],
            FieldExpr::Sin { axis, freq, phase, amplitude } => {
                amplitude * (freq * x[*axis] + phase).sin()
            }
            FieldExpr::Cos { axis, freq, phase, amplitude } => {
                amplitude * (freq * x[*axis] + phase).cos()
            }
            FieldExpr::Poly { axis, coeffs } => {
                let v = x[*axis];
                coeffs.iter().rev().fold(0.0, |acc, c| acc * v + c)
            }
            FieldExpr::Gauss { center, width } => {
                let d2: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (-0.5 * d2 / (width * width)).exp()
            }
            FieldExpr::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
            FieldExpr::Prod { factors } => factors.iter().map(|t| t.eval(x)).product(),
            FieldExpr::Preset { name } => match name.as_str() {
                "zero" => 0.0,
                "one" => 1.0,
                _ => f64::NAN,
            },
        }
    }

    fn is_polynomial(&self) -> bool {
        match self {
            FieldExpr::Const { .. } | FieldExpr::Coord { .. } | FieldExpr::Poly { .. } => true,
            FieldExpr::Sum { terms } => terms.iter().all(|t| t.is_polynomial()),
            FieldExpr::Prod { factors } => factors.iter().all(|t| t.is_polynomial()),
            FieldExpr::Preset { name } => matches!(name.as_str(), "zero" | "one"),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let FieldExpr::Preset { name } = self {
            if !matches!(name.as_str(), "zero" | "one") {
                return Err(Error::Config(format!("unknown field preset '{name}'")));
            }
        }
        match self {
            FieldExpr::Sum { terms } => terms.iter().try_for_each(|t| t.validate()),
            FieldExpr::Prod { factors } => factors.iter().try_for_each(|t| t.validate()),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> ScalarField {
        let expr = self.clone();
        let smooth = if self.is_polynomial() { Smoothness::Polynomial } else { Smoothness::Smooth };
        ScalarField::new(move |x: &[f64]| expr.eval(x)).with_smoothness(smooth)
    }
}

/// g(x, t) = offset + spatial(x) * exp(-decay * t) + ramp * t.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeFieldExpr {
    pub spatial: FieldExpr,
    #[serde(default)]
    pub decay: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub ramp: f64,
}

impl TimeFieldExpr {
    pub fn build(&self) -> TimeField {
        let spec = self.clone();
        TimeField::new(move |x: &[f64], t: f64| {
            spec.offset + spec.spatial.eval(x) * (-spec.decay * t).exp() + spec.ramp * t
        })
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.group.build()?;
        self.kernel.shape()?;
        if let Some(data) = &self.data {
            data.u0.validate()?;
            data.g.spatial.validate()?;
        }
        if self.time.horizon < 0.0 {
            return Err(Error::Config("time.T must be nonnegative".into()));
        }
        Ok(())
    }

    fn data(&self) -> Result<(ScalarField, TimeField)> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("missing 'data' section".into()))?;
        Ok((data.u0.build(), data.g.build()))
    }

    /// Assemble the convergence-study setup from the sweep section.
    pub fn study_setup(&self, id: &str, seed: u64) -> Result<StudySetup> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::Config("missing 'sweep' section".into()))?;
        let group = self.group.build()?;
        let kind = operator_kind(&sweep.operator)?;
        let (u0, g) = self.data()?;
        let (coeffs, scalar) = self.build_coefficients(kind, &group)?;
        let reference = self
            .reference
            .as_ref()
            .ok_or_else(|| Error::Config("missing 'reference' section".into()))?;
        let thresholds = StudyThresholds {
            min_slope: sweep.min_slope.unwrap_or(0.8),
            max_residual: sweep.max_residual.unwrap_or(0.15),
            require_decreasing: sweep.require_decreasing.unwrap_or(true),
        };
        Ok(StudySetup {
            id: id.to_string(),
            group,
            kind,
            kernel_shape: self.kernel.shape()?,
            kernel_radius: self.kernel.radius,
            kernel_nodes: self.kernel.nodes,
            coeffs,
            scalar,
            u0,
            g,
            bounds: self.domain.bounds.clone(),
            horizon: self.time.horizon,
            epsilons: sweep.epsilons.clone(),
            spacing: match sweep.fixed_h {
                Some(h) => SpacingRule::Fixed(h),
                None => SpacingRule::Subordinate,
            },
            h_ref: reference.h_ref,
            dt_ref: reference.dt_ref,
            outputs: self.time.outputs,
            thresholds,
            enforce_subdominance: sweep.enforce_subdominance.unwrap_or(false),
            beta: self.coefficients.as_ref().and_then(|c| c.beta).unwrap_or(1.0),
            seed,
        })
    }

    pub fn build_coefficients(
        &self,
        kind: OperatorKind,
        group: &StratifiedGroup,
    ) -> Result<(Option<CoefficientSet>, Option<ScalarField>)> {
        match kind {
            OperatorKind::Convolution => Ok((None, None)),
            OperatorKind::DriftDiffusion => {
                let cfg = self
                    .coefficients
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing 'coefficients' section".into()))?;
                Ok((Some(cfg.build(group)?), None))
            }
            OperatorKind::FokkerPlanck => {
                let cfg = self
                    .coefficients
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing 'coefficients' section".into()))?;
                Ok((None, Some(cfg.scalar_field(group)?)))
            }
        }
    }

    pub fn output_formats(&self) -> Result<Vec<ReportFormat>> {
        let names = self
            .output
            .as_ref()
            .map(|o| o.formats.clone())
            .unwrap_or_else(default_formats);
        names.iter().map(|n| n.parse()).collect()
    }
}
