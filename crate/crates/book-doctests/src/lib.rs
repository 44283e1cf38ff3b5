//! Doc-tests for the guide chapters.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/mesh.md")]
mod mesh {}

#[doc = include_str!("../../../book/src/petrophysics.md")]
mod petrophysics {}

#[doc = include_str!("../../../book/src/discretization.md")]
mod discretization {}

#[doc = include_str!("../../../book/src/solver.md")]
mod solver {}

#[doc = include_str!("../../../book/src/adapt.md")]
mod adapt {}

#[doc = include_str!("../../../book/src/io_cli.md")]
mod io_cli {}
