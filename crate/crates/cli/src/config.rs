use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use softscatter::homogenized::CapacitanceDensityField;
use softscatter::inverse::{default_xi_max, ReconstructionParams, SynthesisOptions, XiGrid};
use softscatter::medium::{BackgroundMedium, Profile};
use softscatter::planner::PlanOptions;
use softscatter::quadrature::SphereQuadrature;
use softscatter::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    pub k: f64,
    pub b0: f64,
    #[serde(default = "vacuum")]
    pub profile: Profile,
}

fn vacuum() -> Profile {
    Profile::Vacuum
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionConfig {
    pub outgoing_degree: usize,
    pub incoming_degree: usize,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        Self { outgoing_degree: 12, incoming_degree: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Cell size of the volume grid; defaults to the largest admissible one.
    pub spacing: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellConfig {
    pub b1: f64,
    pub b2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionConfig {
    pub ell_max: Option<usize>,
    #[serde(default = "default_r_param")]
    pub r_param: f64,
    pub xi_max: Option<f64>,
    #[serde(default = "default_xi_spacing")]
    pub xi_spacing: f64,
    #[serde(default = "default_regularization")]
    pub regularization: f64,
    /// Spacing of the reconstructed density grid.
    pub density_spacing: Option<f64>,
    /// Fraction of failed frequency nodes above which the run counts as an
    /// inversion failure.
    #[serde(default = "default_failure_fraction")]
    pub max_failed_fraction: f64,
}

fn default_r_param() -> f64 {
    8.0
}
fn default_xi_spacing() -> f64 {
    0.25
}
fn default_regularization() -> f64 {
    1e-10
}
fn default_failure_fraction() -> f64 {
    0.5
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            ell_max: None,
            r_param: default_r_param(),
            xi_max: None,
            xi_spacing: default_xi_spacing(),
            regularization: default_regularization(),
            density_spacing: None,
            max_failed_fraction: default_failure_fraction(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    pub radius: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hard_core")]
    pub hard_core_factor: f64,
}

fn default_hard_core() -> f64 {
    10.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub particles: Option<PathBuf>,
    pub density: Option<PathBuf>,
    pub amplitude: Option<PathBuf>,
    pub target_amplitude: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub samples: usize,
    pub incoming: [f64; 3],
}

/// Analytic density used when no density file is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum TargetDensity {
    Gaussian { eps: f64, s: f64 },
    Constant { value: f64 },
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub medium: MediumConfig,
    #[serde(default)]
    pub directions: DirectionConfig,
    pub grid: Option<GridConfig>,
    pub shell: Option<ShellConfig>,
    #[serde(default)]
    pub inversion: InversionConfig,
    pub planner: Option<PlannerConfig>,
    #[serde(default)]
    pub paths: PathConfig,
    pub probe: Option<ProbeConfig>,
    pub target: Option<TargetDensity>,
    /// Directory containing the config file; relative paths resolve here.
    #[serde(skip)]
    pub base: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: RunConfig = softscatter::io::read_json(path)?;
        c.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        c.validate()?;
        Ok(c)
    }

    /// Checks every physical parameter before any computation starts.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != softscatter::io::FORMAT_VERSION {
            return Err(Error::Format(format!("config format_version {} is not supported", self.format_version)));
        }
        let m = self.medium()?;
        self.outgoing()?;
        self.incoming()?;
        if let Some(g) = &self.grid {
            if let Some(h) = g.spacing {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::Domain(format!("grid spacing must be positive, got {h}")));
                }
            }
        }
        if let Some(s) = &self.shell {
            softscatter::quadrature::ShellSpec::new(m.b0(), s.b1, s.b2)?;
        }
        let inv = &self.inversion;
        if !(inv.r_param > 0.0 && inv.xi_spacing > 0.0 && inv.regularization >= 0.0) {
            return Err(Error::Domain("inversion needs r_param > 0, xi_spacing > 0 and regularization ≥ 0".into()));
        }
        if let Some(p) = &self.planner {
            if !(p.radius > 0.0 && p.hard_core_factor > 0.0) {
                return Err(Error::Domain("planner radius and hard-core factor must be positive".into()));
            }
        }
        if let Some(p) = &self.probe {
            if p.samples < 2 {
                return Err(Error::Domain("probe needs at least two samples".into()));
            }
            softscatter::specfun::ComplexDirection::from_real(p.incoming)?;
        }
        if let Some(TargetDensity::Gaussian { eps, s }) = &self.target {
            if !(*eps >= 0.0 && *s > 0.0) {
                return Err(Error::Domain("gaussian target needs eps ≥ 0 and s > 0".into()));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn medium(&self) -> Result<BackgroundMedium> {
        BackgroundMedium::new(self.medium.k, self.medium.b0, self.medium.profile.clone())
    }

    pub fn outgoing(&self) -> Result<SphereQuadrature> {
        SphereQuadrature::new(self.directions.outgoing_degree)
    }

    pub fn incoming(&self) -> Result<SphereQuadrature> {
        SphereQuadrature::new(self.directions.incoming_degree)
    }

    /// Configured spacing, or the coarsest one the solver accepts.
    pub fn spacing(&self, medium: &BackgroundMedium) -> f64 {
        let max = 2.0 * std::f64::consts::PI / (10.0 * medium.k0_max());
        let wanted = self.grid.as_ref().and_then(|g| g.spacing).unwrap_or(medium.b0() / 10.0);
        wanted.min(max)
    }

    pub fn planner(&self) -> Result<&PlannerConfig> {
        self.planner.as_ref().ok_or_else(|| Error::Format("config has no planner section".into()))
    }

    pub fn plan_options(&self) -> Result<PlanOptions> {
        Ok(PlanOptions { hard_core_factor: self.planner()?.hard_core_factor, ..PlanOptions::default() })
    }

    pub fn reconstruction_params(&self, medium: &BackgroundMedium) -> ReconstructionParams {
        let inv = &self.inversion;
        let b0 = medium.b0();
        let shell_factors = self.shell.as_ref().map(|s| (s.b1 / b0, s.b2 / b0)).unwrap_or((1.1, 1.3));
        ReconstructionParams {
            r_param: inv.r_param,
            ell_max: inv.ell_max,
            shell_factors,
            density_spacing: inv.density_spacing,
            synthesis: SynthesisOptions { regularization: inv.regularization, ..SynthesisOptions::default() },
        }
    }

    pub fn xi_grid(&self, medium: &BackgroundMedium) -> Result<XiGrid> {
        let xi_max = self.inversion.xi_max.unwrap_or_else(|| default_xi_max(medium.k()));
        XiGrid::new(xi_max, self.inversion.xi_spacing)
    }

    /// Density from the configured file, else from the analytic target.
    pub fn density(&self, medium: &BackgroundMedium) -> Result<CapacitanceDensityField> {
        if let Some(p) = &self.paths.density {
            return softscatter::io::read_density(&self.resolve(p));
        }
        let h = self.spacing(medium);
        let b0 = medium.b0();
        match &self.target {
            Some(TargetDensity::Gaussian { eps, s }) => CapacitanceDensityField::gaussian(b0, h, *eps, *s),
            Some(TargetDensity::Constant { value }) => CapacitanceDensityField::constant(b0, h, *value),
            Some(TargetDensity::Zero) => CapacitanceDensityField::zero(b0, h),
            None => Err(Error::Format("config names neither paths.density nor target".into())),
        }
    }
}
