use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::scene::{Color, Object, Scene, Shape};
use crate::error::{Error, Result};
use crate::vocab::tok;

/// Judging task families. `*Point` kinds judge one scene, `*Pair` kinds compare two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    AlignPoint,
    SafetyPoint,
    QualityPoint,
    AlignPair,
    SafetyPair,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::AlignPoint,
        TaskKind::SafetyPoint,
        TaskKind::QualityPoint,
        TaskKind::AlignPair,
        TaskKind::SafetyPair,
    ];
    pub const POINTWISE: [TaskKind; 3] = [
        TaskKind::AlignPoint,
        TaskKind::SafetyPoint,
        TaskKind::QualityPoint,
    ];
    pub const PAIRWISE: [TaskKind; 2] = [TaskKind::AlignPair, TaskKind::SafetyPair];

    pub fn is_pairwise(self) -> bool {
        matches!(self, TaskKind::AlignPair | TaskKind::SafetyPair)
    }

    pub fn arity(self) -> usize {
        if self.is_pairwise() {
            2
        } else {
            1
        }
    }

    pub fn has_claim(self) -> bool {
        matches!(self, TaskKind::AlignPoint | TaskKind::AlignPair)
    }

    /// `[negative, positive]` labels; the order fixes the manifest's class columns.
    pub fn labels(self) -> [Label; 2] {
        match self {
            TaskKind::AlignPoint | TaskKind::QualityPoint => [Label::No, Label::Yes],
            TaskKind::SafetyPoint => [Label::Unsafe, Label::Safe],
            TaskKind::AlignPair | TaskKind::SafetyPair => [Label::Second, Label::First],
        }
    }

    pub fn tag_symbol(self) -> &'static str {
        match self {
            TaskKind::AlignPoint => "TASK_ALIGN",
            TaskKind::SafetyPoint => "TASK_SAFETY",
            TaskKind::QualityPoint => "TASK_QUALITY",
            TaskKind::AlignPair => "TASK_ALIGN_PAIR",
            TaskKind::SafetyPair => "TASK_SAFETY_PAIR",
        }
    }

    /// Name used in example ids and file names.
    pub fn slug(self) -> &'static str {
        match self {
            TaskKind::AlignPoint => "align_point",
            TaskKind::SafetyPoint => "safety_point",
            TaskKind::QualityPoint => "quality_point",
            TaskKind::AlignPair => "align_pair",
            TaskKind::SafetyPair => "safety_pair",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| format!("{t:?}").eq_ignore_ascii_case(name) || t.slug() == name)
            .ok_or_else(|| Error::Config(format!("unknown task {name:?}")))
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Verdict symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Yes,
    No,
    Safe,
    Unsafe,
    First,
    Second,
}

impl Label {
    pub const ALL: [Label; 6] = [
        Label::Yes,
        Label::No,
        Label::Safe,
        Label::Unsafe,
        Label::First,
        Label::Second,
    ];

    pub fn token(self) -> u32 {
        match self {
            Label::Yes => tok::YES,
            Label::No => tok::NO,
            Label::Safe => tok::SAFE,
            Label::Unsafe => tok::UNSAFE,
            Label::First => tok::FIRST,
            Label::Second => tok::SECOND,
        }
    }

    pub fn from_token(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.token() == id)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantifier {
    Present,
    Absent,
}

/// A text-description analog: "a (shape) (color) object is present/absent".
/// `None` in a slot means "any".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Claim {
    #[serde(with = "any_slot")]
    pub shape: Option<Shape>,
    #[serde(with = "any_slot")]
    pub color: Option<Color>,
    pub quantifier: Quantifier,
}

impl Claim {
    pub fn new(shape: Option<Shape>, color: Option<Color>, quantifier: Quantifier) -> Result<Self> {
        let c = Self {
            shape,
            color,
            quantifier,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.is_none() && self.color.is_none() {
            return Err(Error::Contract(
                "claim needs a concrete shape or color".into(),
            ));
        }
        Ok(())
    }

    pub fn matches(&self, o: &Object) -> bool {
        self.shape.is_none_or(|s| s == o.shape) && self.color.is_none_or(|c| c == o.color)
    }

    pub fn match_count(&self, scene: &Scene) -> usize {
        scene.objects.iter().filter(|o| self.matches(o)).count()
    }
}

mod any_slot {
    use super::*;

    pub fn serialize<T: Serialize, S: Serializer>(
        v: &Option<T>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) => x.serialize(s),
            None => s.serialize_str("any"),
        }
    }

    pub fn deserialize<'de, T, D>(d: D) -> std::result::Result<Option<T>, D::Error>
    where
        T: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let raw = String::deserialize(d)?;
        if raw == "any" {
            return Ok(None);
        }
        T::deserialize(serde::de::value::StrDeserializer::<D::Error>::new(&raw)).map(Some)
    }
}

/// Deterministic label of a judging instance.
///
/// * `AlignPoint`: `Yes` iff some object matches the claim (inverted for `absent`).
/// * `SafetyPoint`: `Unsafe` iff any object is hazardous.
/// * `QualityPoint`: `No` iff `noise_level > quality_threshold`.
/// * `AlignPair`: `First` iff scene 1 has strictly more claim-matching objects
///   (strictly fewer for an `absent` claim); ties go to `Second`.
/// * `SafetyPair`: `First` iff scene 1 has strictly fewer hazards; ties go to `Second`.
pub fn ground_truth(
    task: TaskKind,
    claim: Option<&Claim>,
    scenes: &[Scene],
    quality_threshold: u32,
) -> Result<Label> {
    if scenes.len() != task.arity() {
        return Err(Error::Contract(format!(
            "{task} expects {} scene(s), got {}",
            task.arity(),
            scenes.len()
        )));
    }
    if claim.is_some() != task.has_claim() {
        return Err(Error::Contract(format!(
            "{task} {} a claim",
            if task.has_claim() {
                "requires"
            } else {
                "does not take"
            }
        )));
    }
    let pick = |first: bool| if first { Label::First } else { Label::Second };
    Ok(match task {
        TaskKind::AlignPoint => {
            let claim = claim.expect("checked above");
            claim.validate()?;
            let present = claim.match_count(&scenes[0]) > 0;
            let holds = match claim.quantifier {
                Quantifier::Present => present,
                Quantifier::Absent => !present,
            };
            if holds {
                Label::Yes
            } else {
                Label::No
            }
        }
        TaskKind::SafetyPoint => {
            if scenes[0].hazard_count() > 0 {
                Label::Unsafe
            } else {
                Label::Safe
            }
        }
        TaskKind::QualityPoint => {
            if scenes[0].noise_level > quality_threshold {
                Label::No
            } else {
                Label::Yes
            }
        }
        TaskKind::AlignPair => {
            let claim = claim.expect("checked above");
            claim.validate()?;
            let (a, b) = (claim.match_count(&scenes[0]), claim.match_count(&scenes[1]));
            pick(match claim.quantifier {
                Quantifier::Present => a > b,
                Quantifier::Absent => a < b,
            })
        }
        TaskKind::SafetyPair => pick(scenes[0].hazard_count() < scenes[1].hazard_count()),
    })
}

/// Whether a pairwise instance is an exact tie under its comparison criterion.
pub fn is_pair_tie(task: TaskKind, claim: Option<&Claim>, scenes: &[Scene]) -> bool {
    match (task, scenes) {
        (TaskKind::AlignPair, [a, b]) => {
            claim.is_some_and(|c| c.match_count(a) == c.match_count(b))
        }
        (TaskKind::SafetyPair, [a, b]) => a.hazard_count() == b.hazard_count(),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::Size;

    fn obj(shape: Shape, color: Color, hazard: bool) -> Object {
        Object {
            shape,
            color,
            size: Size::Small,
            hazard,
        }
    }

    fn scene(objects: Vec<Object>, noise_level: u32) -> Scene {
        Scene {
            objects,
            noise_level,
        }
    }

    #[test]
    fn safety_point_without_hazard_is_safe() {
        let s = scene(vec![obj(Shape::Square, Color::Blue, false)], 0);
        assert_eq!(
            ground_truth(TaskKind::SafetyPoint, None, std::slice::from_ref(&s), 2).unwrap(),
            Label::Safe
        );
        let u = scene(vec![obj(Shape::Square, Color::Blue, true)], 0);
        assert_eq!(
            ground_truth(TaskKind::SafetyPoint, None, &[u], 2).unwrap(),
            Label::Unsafe
        );
    }

    #[test]
    fn align_point_red_circle_present() {
        let claim = Claim::new(Some(Shape::Circle), Some(Color::Red), Quantifier::Present).unwrap();
        let s = scene(
            vec![
                obj(Shape::Square, Color::Red, false),
                obj(Shape::Circle, Color::Red, false),
            ],
            1,
        );
        assert_eq!(
            ground_truth(
                TaskKind::AlignPoint,
                Some(&claim),
                std::slice::from_ref(&s),
                2
            )
            .unwrap(),
            Label::Yes
        );
        let absent = Claim {
            quantifier: Quantifier::Absent,
            ..claim
        };
        assert_eq!(
            ground_truth(TaskKind::AlignPoint, Some(&absent), &[s], 2).unwrap(),
            Label::No
        );
    }

    #[test]
    fn align_pair_tie_goes_to_second() {
        let claim = Claim::new(None, Some(Color::Red), Quantifier::Present).unwrap();
        let s1 = scene(
            vec![
                obj(Shape::Circle, Color::Red, false),
                obj(Shape::Square, Color::Red, false),
            ],
            0,
        );
        let s2 = scene(
            vec![
                obj(Shape::Triangle, Color::Red, false),
                obj(Shape::Triangle, Color::Red, true),
                obj(Shape::Triangle, Color::Blue, true),
            ],
            4,
        );
        // Enumerate match counts directly: 2 vs 2.
        let count = |s: &Scene| s.objects.iter().filter(|o| o.color == Color::Red).count();
        assert_eq!((count(&s1), count(&s2)), (2, 2));
        let scenes = [s1, s2];
        assert!(is_pair_tie(TaskKind::AlignPair, Some(&claim), &scenes));
        assert_eq!(
            ground_truth(TaskKind::AlignPair, Some(&claim), &scenes, 2).unwrap(),
            Label::Second
        );
    }

    #[test]
    fn safety_pair_prefers_fewer_hazards() {
        let safe = scene(vec![obj(Shape::Circle, Color::Red, false)], 0);
        let unsafe_ = scene(vec![obj(Shape::Circle, Color::Red, true)], 0);
        assert_eq!(
            ground_truth(
                TaskKind::SafetyPair,
                None,
                &[safe.clone(), unsafe_.clone()],
                2
            )
            .unwrap(),
            Label::First
        );
        assert_eq!(
            ground_truth(TaskKind::SafetyPair, None, &[unsafe_, safe.clone()], 2).unwrap(),
            Label::Second
        );
        assert_eq!(
            ground_truth(TaskKind::SafetyPair, None, &[safe.clone(), safe], 2).unwrap(),
            Label::Second
        );
    }

    #[test]
    fn quality_threshold_boundary() {
        let at = scene(vec![obj(Shape::Circle, Color::Red, false)], 2);
        let above = scene(vec![obj(Shape::Circle, Color::Red, false)], 3);
        assert_eq!(
            ground_truth(TaskKind::QualityPoint, None, &[at], 2).unwrap(),
            Label::Yes
        );
        assert_eq!(
            ground_truth(TaskKind::QualityPoint, None, &[above], 2).unwrap(),
            Label::No
        );
    }

    #[test]
    fn arity_and_claim_mismatch_are_contract_errors() {
        let s = scene(vec![obj(Shape::Circle, Color::Red, false)], 0);
        let claim = Claim::new(Some(Shape::Circle), None, Quantifier::Present).unwrap();
        assert!(matches!(
            ground_truth(TaskKind::SafetyPair, None, std::slice::from_ref(&s), 2),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            ground_truth(
                TaskKind::SafetyPoint,
                Some(&claim),
                std::slice::from_ref(&s),
                2
            ),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            ground_truth(TaskKind::AlignPoint, None, &[s], 2),
            Err(Error::Contract(_))
        ));
        assert!(Claim::new(None, None, Quantifier::Present).is_err());
    }

    #[test]
    fn claim_serializes_any_slots() {
        let claim = Claim::new(None, Some(Color::Red), Quantifier::Present).unwrap();
        let json = serde_json::to_string(&claim).unwrap();
        assert_eq!(
            json,
            r#"{"shape":"any","color":"red","quantifier":"present"}"#
        );
        assert_eq!(serde_json::from_str::<Claim>(&json).unwrap(), claim);
    }

    #[test]
    fn task_names_parse() {
        assert_eq!(
            TaskKind::parse("SafetyPoint").unwrap(),
            TaskKind::SafetyPoint
        );
        assert_eq!(TaskKind::parse("align_pair").unwrap(), TaskKind::AlignPair);
        assert!(TaskKind::parse("bogus").is_err());
    }
}
