//! Representation-information registry, format identification and OAIS
//! packaging for digital building documents.

pub mod fixity;
pub mod ident;
pub mod model;
pub mod oais;
pub mod registry;
pub mod report;
