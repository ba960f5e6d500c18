use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Which silo couple a recipe runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    /// Silos 1 and 4: basic process, transfer, heat, mix.
    A,
    /// Silos 2 and 3: heat, transfer, mix.
    B,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::A => "A",
            Kind::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BatchPhase {
    Fill1,
    BasicProcess,
    Transfer1To4,
    Heat4,
    Mix4,
    Empty4,
    Fill2,
    Heat2,
    Transfer2To3,
    Mix3,
    Empty3,
    Done,
}

impl BatchPhase {
    pub fn sequence(kind: Kind) -> &'static [BatchPhase] {
        use BatchPhase::*;
        match kind {
            Kind::A => &[Fill1, BasicProcess, Transfer1To4, Heat4, Mix4, Empty4, Done],
            Kind::B => &[Fill2, Heat2, Transfer2To3, Mix3, Empty3, Done],
        }
    }

    pub fn as_str(self) -> &'static str {
        use BatchPhase::*;
        match self {
            Fill1 => "fill1",
            BasicProcess => "basic_process",
            Transfer1To4 => "transfer_1_to_4",
            Heat4 => "heat4",
            Mix4 => "mix4",
            Empty4 => "empty4",
            Fill2 => "fill2",
            Heat2 => "heat2",
            Transfer2To3 => "transfer_2_to_3",
            Mix3 => "mix3",
            Empty3 => "empty3",
            Done => "done",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Kind::A, Kind::B]
            .iter()
            .flat_map(|k| Self::sequence(*k))
            .copied()
            .find(|p| p.as_str() == s)
    }
}

impl fmt::Display for BatchPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub kind: Kind,
    pub batch_id: String,
    /// Seconds held in silo 1 (kind A only).
    pub basic_process_time: f64,
    pub target_temp: f64,
    pub mix_time: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecipeError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("recipe is missing {0}")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl Recipe {
    pub fn new(kind: Kind, batch_id: impl Into<String>, target_temp: f64, mix_time: f64) -> Self {
        Recipe {
            kind,
            batch_id: batch_id.into(),
            basic_process_time: 0.0,
            target_temp,
            mix_time,
        }
    }

    pub fn with_basic_process(mut self, seconds: f64) -> Self {
        self.basic_process_time = seconds;
        self
    }

    pub fn load(path: &Path) -> Result<Self, RecipeError> {
        let text = std::fs::read_to_string(path).map_err(|e| RecipeError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        text.parse()
    }

    /// Checks the parameters against the plant's ambient temperature.
    pub fn validate(&self, ambient_temp: f64) -> Result<(), RecipeError> {
        let invalid = |m: String| Err(RecipeError::Invalid(m));
        if self.batch_id.is_empty() || self.batch_id.contains([',', '\n', '"']) {
            return invalid(format!("batch_id {:?} must be non-empty without commas or quotes", self.batch_id));
        }
        if !(self.target_temp.is_finite() && self.target_temp > ambient_temp) {
            return invalid(format!(
                "target_temp {} must exceed ambient {ambient_temp}",
                self.target_temp
            ));
        }
        if !(self.mix_time.is_finite() && self.mix_time > 0.0) {
            return invalid(format!("mix_time {} must be positive", self.mix_time));
        }
        if !(self.basic_process_time.is_finite() && self.basic_process_time >= 0.0) {
            return invalid(format!("basic_process_time {} must be non-negative", self.basic_process_time));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("kind={}\nbatch_id={}\n", self.kind, self.batch_id);
        if self.kind == Kind::A {
            out += &format!("basic_process_time={}\n", self.basic_process_time);
        }
        out += &format!("target_temp={}\nmix_time={}\n", self.target_temp, self.mix_time);
        out
    }
}

impl FromStr for Recipe {
    type Err = RecipeError;

    /// `key=value` lines; `#` starts a comment.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut kind = None;
        let mut batch_id = None;
        let mut basic = None;
        let mut target = None;
        let mut mix = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| RecipeError::Syntax { line: n + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("{k} needs a number, found {v:?}")));
            match k {
                "kind" => {
                    kind = Some(match v {
                        "A" | "a" => Kind::A,
                        "B" | "b" => Kind::B,
                        _ => return Err(err(format!("kind must be A or B, found {v:?}"))),
                    })
                }
                "batch_id" => batch_id = Some(v.to_string()),
                "basic_process_time" => basic = Some(num(v)?),
                "target_temp" => target = Some(num(v)?),
                "mix_time" => mix = Some(num(v)?),
                _ => return Err(err(format!("unknown key {k:?}"))),
            }
        }
        let kind = kind.ok_or(RecipeError::Missing("kind"))?;
        if kind == Kind::A && basic.is_none() {
            return Err(RecipeError::Missing("basic_process_time"));
        }
        Ok(Recipe {
            kind,
            batch_id: batch_id.unwrap_or_else(|| format!("{kind}1")),
            basic_process_time: basic.unwrap_or(0.0),
            target_temp: target.ok_or(RecipeError::Missing("target_temp"))?,
            mix_time: mix.ok_or(RecipeError::Missing("mix_time"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_recipes_parse() {
        let b: Recipe = include_str!("../../data/recipe_b.recipe").parse().unwrap();
        assert_eq!(b, Recipe::new(Kind::B, "B1", 35.0, 10.0));
        let a: Recipe = include_str!("../../data/recipe_a.recipe").parse().unwrap();
        assert_eq!(a.basic_process_time, 5.0);
        assert_eq!(a.to_text().parse::<Recipe>().unwrap(), a);
        b.validate(20.0).unwrap();
    }

    #[test]
    fn bad_recipes() {
        assert!(matches!("kind=C".parse::<Recipe>(), Err(RecipeError::Syntax { line: 1, .. })));
        assert_eq!(
            "kind=B\ntarget_temp=35".parse::<Recipe>(),
            Err(RecipeError::Missing("mix_time"))
        );
        assert_eq!(
            "kind=A\ntarget_temp=35\nmix_time=1".parse::<Recipe>(),
            Err(RecipeError::Missing("basic_process_time"))
        );
        assert!(Recipe::new(Kind::B, "B1", 15.0, 10.0).validate(20.0).is_err());
        assert!(Recipe::new(Kind::B, "B1", 35.0, 0.0).validate(20.0).is_err());
    }
}
