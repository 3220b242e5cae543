use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Large,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn symbol(self) -> &'static str {
        match self {
            Shape::Circle => "CIRCLE",
            Shape::Square => "SQUARE",
            Shape::Triangle => "TRIANGLE",
        }
    }
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Green, Color::Blue];

    pub fn symbol(self) -> &'static str {
        match self {
            Color::Red => "RED",
            Color::Green => "GREEN",
            Color::Blue => "BLUE",
        }
    }
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Small, Size::Large];

    pub fn symbol(self) -> &'static str {
        match self {
            Size::Small => "SMALL",
            Size::Large => "LARGE",
        }
    }
}

/// One attributed object inside a synthetic observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Object {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    pub hazard: bool,
}

/// Synthetic observation standing in for an image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub objects: Vec<Object>,
    pub noise_level: u32,
}

impl Scene {
    pub fn hazard_count(&self) -> usize {
        self.objects.iter().filter(|o| o.hazard).count()
    }
}

/// Sampling distribution for scenes.
///
/// The object count is uniform on `1..=object_max`; attributes are drawn
/// independently per object from the categorical weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub object_max: usize,
    pub noise_max: u32,
    pub shape_weights: [f64; 3],
    pub color_weights: [f64; 3],
    pub size_weights: [f64; 2],
    pub hazard_prob: f64,
    /// Weights over `0..=noise_max`; uniform when absent.
    pub noise_weights: Option<Vec<f64>>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            object_max: 5,
            noise_max: 5,
            shape_weights: [1.0; 3],
            color_weights: [1.0; 3],
            size_weights: [1.0; 2],
            hazard_prob: 0.15,
            noise_weights: None,
        }
    }
}

fn check_weights(name: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!(
            "{name} must be non-negative with a positive sum, got {w:?}"
        )));
    }
    Ok(())
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.object_max < 1 {
            return Err(Error::Config("object_max must be at least 1".into()));
        }
        check_weights("shape_weights", &self.shape_weights)?;
        check_weights("color_weights", &self.color_weights)?;
        check_weights("size_weights", &self.size_weights)?;
        if !(0.0..=1.0).contains(&self.hazard_prob) {
            return Err(Error::Config(format!(
                "hazard_prob must lie in [0, 1], got {}",
                self.hazard_prob
            )));
        }
        if let Some(w) = &self.noise_weights {
            if w.len() != self.noise_max as usize + 1 {
                return Err(Error::Config(format!(
                    "noise_weights needs {} entries, got {}",
                    self.noise_max + 1,
                    w.len()
                )));
            }
            check_weights("noise_weights", w)?;
        }
        Ok(())
    }
}

/// Index drawn from unnormalized categorical weights.
pub(crate) fn categorical(rng: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding can leave u marginally above the last bucket.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

pub fn generate_scene(rng: &mut Rng, config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let n = rng.gen_range(1..=config.object_max);
    let objects = (0..n)
        .map(|_| Object {
            shape: Shape::ALL[categorical(rng, &config.shape_weights)],
            color: Color::ALL[categorical(rng, &config.color_weights)],
            size: Size::ALL[categorical(rng, &config.size_weights)],
            hazard: rng.gen::<f64>() < config.hazard_prob,
        })
        .collect();
    let noise_level = match &config.noise_weights {
        Some(w) => categorical(rng, w) as u32,
        None => rng.gen_range(0..=config.noise_max),
    };
    Ok(Scene {
        objects,
        noise_level,
    })
}
