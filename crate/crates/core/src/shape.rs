//! Tensor shapes with an optional leading batch wildcard.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

/// One dimension of a declared shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dim {
    /// The batch wildcard `?`, bound to the number of rows at run time.
    Batch,
    Fixed(usize),
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Batch => f.write_str("?"),
            Dim::Fixed(n) => write!(f, "{n}"),
        }
    }
}

/// Why a list of dimensions is not a valid [`Shape`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("shape must have at least one dimension")]
    Empty,
    #[error("batch wildcard is only allowed as the first dimension")]
    MisplacedWildcard,
    #[error("dimensions must be at least 1")]
    ZeroDim,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape(Vec<Dim>);

impl Shape {
    pub fn new(dims: Vec<Dim>) -> Result<Self, ShapeError> {
        if dims.is_empty() {
            return Err(ShapeError::Empty);
        }
        if dims.iter().skip(1).any(|d| *d == Dim::Batch) {
            return Err(ShapeError::MisplacedWildcard);
        }
        if dims.contains(&Dim::Fixed(0)) {
            return Err(ShapeError::ZeroDim);
        }
        Ok(Shape(dims))
    }

    /// A shape whose first dimension is the batch wildcard.
    pub fn batched(rest: &[usize]) -> Self {
        let mut dims = vec![Dim::Batch];
        dims.extend(rest.iter().map(|&n| Dim::Fixed(n)));
        Shape(dims)
    }

    /// A shape with no wildcard.
    pub fn fixed(dims: &[usize]) -> Self {
        Shape(dims.iter().map(|&n| Dim::Fixed(n)).collect())
    }

    pub fn dims(&self) -> &[Dim] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn has_batch(&self) -> bool {
        self.0.first() == Some(&Dim::Batch)
    }

    pub fn is_concrete(&self) -> bool {
        !self.has_batch()
    }

    /// Concrete dimensions, with the wildcard bound to `batch`.
    pub fn bind(&self, batch: usize) -> Vec<usize> {
        self.0
            .iter()
            .map(|d| match d {
                Dim::Batch => batch,
                Dim::Fixed(n) => *n,
            })
            .collect()
    }

    /// Number of scalars for a concrete shape, `None` if the shape has a wildcard.
    pub fn num_elements(&self) -> Option<usize> {
        self.0.iter().try_fold(1usize, |acc, d| match d {
            Dim::Batch => None,
            Dim::Fixed(n) => acc.checked_mul(*n),
        })
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

// Shapes travel over JSON as their display text, e.g. "[?, 10]".
impl Serialize for Shape {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Shape {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s
            .trim()
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| format!("shape `{s}` must be bracketed"))?;
        let dims = inner
            .split(',')
            .map(|tok| match tok.trim() {
                "?" => Ok(Dim::Batch),
                n => n
                    .parse::<usize>()
                    .map(Dim::Fixed)
                    .map_err(|_| format!("bad dimension `{n}`")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Shape::new(dims).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_dimension_lists() {
        assert_eq!(Shape::new(vec![]), Err(ShapeError::Empty));
        assert_eq!(
            Shape::new(vec![Dim::Fixed(3), Dim::Batch]),
            Err(ShapeError::MisplacedWildcard)
        );
        assert_eq!(
            Shape::new(vec![Dim::Batch, Dim::Fixed(0)]),
            Err(ShapeError::ZeroDim)
        );
    }

    #[test]
    fn display_and_parse_agree() {
        let s = Shape::batched(&[784]);
        assert_eq!(s.to_string(), "[?, 784]");
        assert_eq!("[?, 784]".parse::<Shape>().unwrap(), s);
        assert_eq!("[10]".parse::<Shape>().unwrap(), Shape::fixed(&[10]));
        assert!("[?, ?]".parse::<Shape>().is_err());
    }

    #[test]
    fn bind_and_count() {
        let s = Shape::batched(&[784]);
        assert_eq!(s.bind(32), vec![32, 784]);
        assert_eq!(s.num_elements(), None);
        assert_eq!(Shape::fixed(&[784, 10]).num_elements(), Some(7840));
    }
}
