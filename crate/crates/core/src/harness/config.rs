//! Experiment configuration files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::field::BoundingBox;
use crate::flux::{FluxOptions, Hypersurface};
use crate::matter::{DensitySource, DustOptions};
use crate::potential::{Harmonic, PointMass, Potential, Uniform, ZeroPotential};
use crate::sampling::{Region, Shell};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: RunSpec,
    pub spacetime: SpacetimeSpec,
    pub region: RegionSpec,
    pub body: BodySpec,
    pub slices: SlicePlan,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub checks: CheckSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    /// Offset into the quasi-random sequences used for trial data.
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            seed: 1,
            output: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpacetimeSpec {
    Flat,
    /// `φ = k |x − c|²`
    Harmonic {
        k: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    /// `φ = −M / |x − c|`
    PointMass {
        mass: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    /// `φ = g · x`
    Uniform { g: [f64; 3] },
}

impl SpacetimeSpec {
    pub fn potential(&self) -> Arc<dyn Potential> {
        match *self {
            SpacetimeSpec::Flat => Arc::new(ZeroPotential),
            SpacetimeSpec::Harmonic { k, center } => Arc::new(Harmonic { k, center }),
            SpacetimeSpec::PointMass { mass, center } => Arc::new(PointMass { mass, center }),
            SpacetimeSpec::Uniform { g } => Arc::new(Uniform { g }),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, SpacetimeSpec::Flat)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SpacetimeSpec::Flat => "flat",
            SpacetimeSpec::Harmonic { .. } => "harmonic",
            SpacetimeSpec::PointMass { .. } => "point-mass",
            SpacetimeSpec::Uniform { .. } => "uniform",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub time: [f64; 2],
    #[serde(default)]
    pub center: [f64; 3],
    pub half_width: f64,
    /// `[r_min, r_max]` about `center`.
    #[serde(default)]
    pub shell: Option<[f64; 2]>,
}

impl RegionSpec {
    pub fn region(&self) -> Region {
        let c = self.center;
        let w = self.half_width;
        Region {
            bbox: BoundingBox::new(
                [self.time[0], c[0] - w, c[1] - w, c[2] - w],
                [self.time[1], c[0] + w, c[1] + w, c[2] + w],
            ),
            shell: self.shell.map(|[r_min, r_max]| Shell {
                center: c,
                r_min,
                r_max,
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSpec {
    pub axis: usize,
    pub cut: f64,
    pub t_cut: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    /// Central curve position at the start of the window.
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Body radii, largest first.
    pub epsilons: Vec<f64>,
    pub window: [f64; 2],
    #[serde(default)]
    pub density: DensitySource,
    #[serde(default)]
    pub dust: DustOptions,
    /// Removes matter past a plane; only for defect runs.
    #[serde(default)]
    pub clip: Option<ClipSpec>,
}

fn default_intervals() -> usize {
    48
}

fn default_substeps() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlicePlan {
    pub times: Vec<f64>,
    /// Slices are the boxes `region.center ± half_width` at each time.
    pub half_width: f64,
    #[serde(default = "default_intervals")]
    pub intervals: usize,
    #[serde(default = "default_substeps")]
    pub transport_substeps: usize,
}

/// Pass thresholds. Every check compares `residual < threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub compatibility: f64,
    pub curvature: f64,
    pub equivalence: f64,
    pub recovery_potential: f64,
    pub recovery_operator: f64,
    /// Spread of `P` and `J` across slices, and the slab balance.
    pub conservation: f64,
    /// Relative `∇_a T^ab` of the body.
    pub divergence: f64,
    pub j_derivative: f64,
    pub center_of_mass: f64,
    pub lemma2: f64,
    /// Relative mass spread.
    pub lemma3: f64,
    pub first_law_residual: f64,
    pub first_law_angle: f64,
    /// Twice this is the noise floor of the convergence sweep.
    pub quadrature: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            compatibility: 1e-6,
            curvature: 1e-6,
            equivalence: 1e-7,
            recovery_potential: 1e-6,
            recovery_operator: 1e-8,
            conservation: 1e-4,
            divergence: 1e-5,
            j_derivative: 1e-4,
            center_of_mass: 1e-6,
            lemma2: 1e-6,
            lemma3: 1e-3,
            first_law_residual: 1e-4,
            first_law_angle: 1e-4,
            quadrature: 1e-6,
        }
    }
}

impl Tolerances {
    fn values(&self) -> [f64; 14] {
        [
            self.compatibility,
            self.curvature,
            self.equivalence,
            self.recovery_potential,
            self.recovery_operator,
            self.conservation,
            self.divergence,
            self.j_derivative,
            self.center_of_mass,
            self.lemma2,
            self.lemma3,
            self.first_law_residual,
            self.first_law_angle,
            self.quadrature,
        ]
    }

    pub fn scaled(&self, f: f64) -> Tolerances {
        Tolerances {
            compatibility: self.compatibility * f,
            curvature: self.curvature * f,
            equivalence: self.equivalence * f,
            recovery_potential: self.recovery_potential * f,
            recovery_operator: self.recovery_operator * f,
            conservation: self.conservation * f,
            divergence: self.divergence * f,
            j_derivative: self.j_derivative * f,
            center_of_mass: self.center_of_mass * f,
            lemma2: self.lemma2 * f,
            lemma3: self.lemma3 * f,
            first_law_residual: self.first_law_residual * f,
            first_law_angle: self.first_law_angle * f,
            quadrature: self.quadrature * f,
        }
    }
}

/// Sample counts and numerical parameters of the checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSpec {
    /// Quasi-random events for pointwise residuals.
    pub events: usize,
    pub equivalence_trials: usize,
    /// Parameter span of each equivalence trajectory.
    pub equivalence_span: f64,
    /// Largest initial spatial speed of equivalence trials.
    pub equivalence_speed: f64,
    pub ode_tolerance: f64,
    /// Tolerance for central curves and reference geodesics.
    pub geodesic_tolerance: f64,
    pub origins: usize,
    pub condition_samples: usize,
    /// Displacement of the stencil in the `∇J` check.
    pub j_step: f64,
    /// Time and space intervals of the slab balance.
    pub stokes_intervals: [usize; 2],
    /// Acceleration of the arbitrary flat frame in flat spacetimes.
    pub frame_acceleration: [f64; 3],
}

impl Default for CheckSpec {
    fn default() -> Self {
        CheckSpec {
            events: 1000,
            equivalence_trials: 20,
            equivalence_span: 1.0,
            equivalence_speed: 0.5,
            ode_tolerance: 1e-8,
            geodesic_tolerance: 1e-11,
            origins: 5,
            condition_samples: 200,
            j_step: 0.05,
            stokes_intervals: [4, 16],
            frame_acceleration: [0.05, -0.03, 0.02],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn with_tolerance_scale(mut self, f: f64) -> Result<Self, HarnessError> {
        if !(f >= 0.0) || !f.is_finite() {
            return Err(HarnessError::Config(format!("tolerance scale must be finite and nonnegative, got {f}")));
        }
        self.tolerances = self.tolerances.scaled(f);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let b = &self.body;
        if b.epsilons.is_empty() {
            return bad("body.epsilons is empty".into());
        }
        if b.epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return bad("body.epsilons must be positive".into());
        }
        if b.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("body.epsilons must be strictly decreasing".into());
        }
        let [w0, w1] = b.window;
        if !(w1 > w0) {
            return bad("body.window must have positive length".into());
        }
        let [t0, t1] = self.region.time;
        if !(w0 >= t0 && w1 <= t1) {
            return bad("body.window must lie inside region.time".into());
        }
        if !(self.region.half_width > 0.0) {
            return bad("region.half_width must be positive".into());
        }
        if let Some([r0, r1]) = self.region.shell {
            if !(r0 >= 0.0 && r1 > r0) {
                return bad("region.shell must satisfy 0 <= r_min < r_max".into());
            }
        }
        let s = &self.slices;
        if s.times.len() < 2 {
            return bad("slices.times needs at least two entries".into());
        }
        if s.times.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("slices.times must be strictly increasing".into());
        }
        if s.times.iter().any(|t| !(*t >= w0 && *t <= w1)) {
            return bad("slices.times must lie inside body.window".into());
        }
        if s.intervals < 2 || s.intervals % 2 != 0 {
            return bad("slices.intervals must be even and at least 2".into());
        }
        if !(s.half_width > 0.0) {
            return bad("slices.half_width must be positive".into());
        }
        if self.tolerances.values().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("tolerances must be finite and nonnegative".into());
        }
        let c = &self.checks;
        if c.events == 0 || c.origins == 0 || c.condition_samples == 0 {
            return bad("check sample counts must be positive".into());
        }
        if !(c.ode_tolerance > 0.0 && c.geodesic_tolerance > 0.0 && c.equivalence_span > 0.0) {
            return bad("check tolerances and spans must be positive".into());
        }
        if let Some(clip) = b.clip {
            if !(1..=3).contains(&clip.axis) {
                return bad("body.clip.axis must be 1, 2 or 3".into());
            }
        }
        Ok(())
    }

    pub fn region(&self) -> Region {
        self.region.region()
    }

    pub fn hypersurfaces(&self) -> Vec<Hypersurface> {
        let c = self.region.center;
        let w = self.slices.half_width;
        self.slices
            .times
            .iter()
            .map(|&t| Hypersurface::future(t, c.map(|v| v - w), c.map(|v| v + w)))
            .collect()
    }

    pub fn flux_options(&self) -> FluxOptions {
        FluxOptions {
            intervals: self.slices.intervals,
            transport_substeps: self.slices.transport_substeps,
            ..FluxOptions::default()
        }
    }

    /// Output directory: the override if given, else the configured one, else `out`.
    pub fn output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir
            .map(Path::to_path_buf)
            .or_else(|| self.run.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
