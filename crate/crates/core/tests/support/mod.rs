//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code paths it checks.
#![allow(dead_code)]

pub mod fixtures;
pub mod paths;
pub mod roots;
