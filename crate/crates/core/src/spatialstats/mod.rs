//! Spatial weights, global Moran's I with permutation inference, and
//! variance inflation factors.

mod moran;
mod vif;
mod weights;

pub use moran::{morans_i, morans_permutation_test, MoranResult};
pub use vif::{vif, VifEntry, VifReport};
pub use weights::{build_weights, UnitGeometry, WeightsMatrix, WeightsMode};
