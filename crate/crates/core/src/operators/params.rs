//! Flat learning-variable vectors with a named, fixed layout.
//!
//! Matrices stored in a slot are column-major, matching `nalgebra`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl ParamSlot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Ordered, contiguous, non-overlapping slots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    slots: Vec<ParamSlot>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a slot after the last one. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> Result<ParamSlot> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(invalid(format!("duplicate parameter slot `{name}`")));
        }
        let slot = ParamSlot {
            name,
            offset: self.len(),
            len,
        };
        self.slots.push(slot.clone());
        Ok(slot)
    }

    pub fn len(&self) -> usize {
        self.slots.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn find(&self, name: &str) -> Option<&ParamSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Checks contiguity; layouts built through `push` always pass, this
    /// guards deserialized ones.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for s in &self.slots {
            if s.offset != next {
                return Err(invalid(format!("parameter slot `{}` is not contiguous", s.name)));
            }
            next += s.len;
        }
        Ok(())
    }
}

/// Learning variables: a flat vector plus the layout that names its pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    flat: Vector,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn new(layout: Arc<ParamLayout>, flat: Vector) -> Result<Self> {
        layout.validate()?;
        check_dim("parameter vector", layout.len(), flat.len())?;
        Ok(Self { flat, layout })
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let flat = Vector::zeros(layout.len());
        Self { flat, layout }
    }

    /// Empty parameter vector for parameter-free operators.
    pub fn empty() -> Self {
        Self::zeros(Arc::new(ParamLayout::new()))
    }

    pub fn flat(&self) -> &Vector {
        &self.flat
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Same layout, new values.
    pub fn with_flat(&self, flat: Vector) -> Result<Self> {
        check_dim("parameter vector", self.layout.len(), flat.len())?;
        Ok(Self {
            flat,
            layout: Arc::clone(&self.layout),
        })
    }

    pub fn get(&self, slot: &ParamSlot) -> &[f64] {
        &self.flat.as_slice()[slot.range()]
    }

    pub fn set(&mut self, slot: &ParamSlot, values: &[f64]) -> Result<()> {
        check_dim("parameter slot", slot.len, values.len())?;
        self.flat.as_mut_slice()[slot.range()].copy_from_slice(values);
        Ok(())
    }

    pub fn named(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|s| self.get(s))
    }

    /// Splits into `(name, values)` pairs in layout order.
    pub fn unflatten(&self) -> Vec<(String, Vec<f64>)> {
        self.layout
            .slots()
            .iter()
            .map(|s| (s.name.clone(), self.get(s).to_vec()))
            .collect()
    }

    /// Inverse of [`ParamVector::unflatten`].
    pub fn from_named(layout: Arc<ParamLayout>, parts: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut w = Self::zeros(layout);
        for (name, values) in parts {
            let slot = w
                .layout
                .find(name)
                .cloned()
                .ok_or_else(|| invalid(format!("unknown parameter slot `{name}`")))?;
            w.set(&slot, values)?;
        }
        Ok(w)
    }
}

/// A scalar coefficient that is either a constant or a learned entry of ω.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Fixed(f64),
    Learned(usize),
}

impl Scalar {
    pub fn learned(slot: &ParamSlot) -> Self {
        debug_assert_eq!(slot.len, 1);
        Scalar::Learned(slot.offset)
    }

    pub fn value(&self, w: &ParamVector) -> f64 {
        match *self {
            Scalar::Fixed(v) => v,
            Scalar::Learned(i) => w.flat[i],
        }
    }

    pub fn accumulate(&self, grad_w: &mut Vector, g: f64) {
        if let Scalar::Learned(i) = *self {
            grad_w[i] += g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Arc<ParamLayout> {
        let mut l = ParamLayout::new();
        l.push("kappa", 1).unwrap();
        l.push("w0", 4).unwrap();
        l.push("b0", 2).unwrap();
        Arc::new(l)
    }

    #[test]
    fn slots_are_contiguous() {
        let l = layout();
        assert_eq!(l.len(), 7);
        assert_eq!(l.find("b0").unwrap().offset, 5);
        assert!(l.validate().is_ok());
        let mut dup = (*l).clone();
        assert!(dup.push("kappa", 1).is_err());
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(ParamVector::new(layout(), Vector::zeros(6)).is_err());
    }

    #[test]
    fn scalar_accessors() {
        let l = layout();
        let w = ParamVector::new(l.clone(), Vector::from_fn(7, |i, _| i as f64)).unwrap();
        let k = Scalar::learned(l.find("kappa").unwrap());
        assert_eq!(k.value(&w), 0.0);
        assert_eq!(Scalar::Fixed(2.5).value(&w), 2.5);
        let mut g = Vector::zeros(7);
        k.accumulate(&mut g, 3.0);
        Scalar::Fixed(1.0).accumulate(&mut g, 3.0);
        assert_eq!(g[0], 3.0);
        assert_eq!(g.sum(), 3.0);
    }

    proptest! {
        #[test]
        fn flatten_roundtrip(values in prop::collection::vec(-1e3f64..1e3, 7)) {
            let w = ParamVector::new(layout(), Vector::from_vec(values)).unwrap();
            let back = ParamVector::from_named(layout(), &w.unflatten()).unwrap();
            prop_assert_eq!(back, w);
        }
    }
}
