//! Numerical dynamics of S-unimodal interval maps.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`] – precision selection, double-double reals, log-products and bisection.
//! * [`maps`] – even unimodal map families on a symmetric interval.
//! * [`nest`] – restrictive intervals, the principal nest and its return branches.
//! * [`stats`] – critical-orbit statistics and branch taxonomies.
//! * [`transversality`] – summability, the ν functional and transversal vector fields.
//! * [`kneading`] – itineraries, regular attractors and straightening.
//! * [`scan`] – single-parameter classification, parameter sweeps and persistence.

pub mod kneading;
pub mod maps;
pub mod nest;
pub mod numerics;
pub mod scan;
pub mod stats;
pub mod transversality;

pub use kneading::{KneadingSequence, RegularReport, Symbol};
pub use maps::{FamilySpec, MapFamily, MapInstance, OrbitSegment};
pub use nest::{Branch, LandingWord, Nest, NestLevel, Reliability};
pub use numerics::{Bracket, Dd, LogProduct, Precision, Real};
pub use scan::{Budgets, Classification, ScanRecord, Verdict};
pub use stats::{CESeries, ClassifierConstants, RecurrenceRecord};
pub use transversality::{PolynomialVectorField, TransversalitySum};
