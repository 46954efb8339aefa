//! Multitask symbolic search for closed-form solutions of parameterized PDE
//! families.

pub mod datagen;
pub mod engine;
pub mod exprcalc;
pub mod fitness;
pub mod genome;
pub mod pdefam;
pub mod transfer;
