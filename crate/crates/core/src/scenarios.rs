//! Built-in scenario library. Each entry is an ordinary scenario file, so
//! `parea <cmd> --config crates/core/scenarios/<name>.toml` is equivalent to
//! `--scenario <name>`.

use crate::config::{parse_scenario, Scenario};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BUILTIN: &[(&str, &str)] = &[
    ("trivial", include_str!("../scenarios/trivial.toml")),
    ("step-c1", include_str!("../scenarios/step-c1.toml")),
    ("step-c2", include_str!("../scenarios/step-c2.toml")),
    ("step-c3", include_str!("../scenarios/step-c3.toml")),
    ("heisenberg-disk-16", include_str!("../scenarios/heisenberg-disk-16.toml")),
    ("heisenberg-disk-32", include_str!("../scenarios/heisenberg-disk-32.toml")),
    ("heisenberg-disk-64", include_str!("../scenarios/heisenberg-disk-64.toml")),
    ("heisenberg-square-64", include_str!("../scenarios/heisenberg-square-64.toml")),
    ("dirichlet-detach", include_str!("../scenarios/dirichlet-detach.toml")),
    ("barrier-notch", include_str!("../scenarios/barrier-notch.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn builtin<T: Scalar>(name: &str) -> Result<Scenario<T>> {
    let (_, text) = BUILTIN.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        Error::InvalidArgument(format!("unknown scenario '{name}'; known: {}", names().collect::<Vec<_>>().join(", ")))
    })?;
    parse_scenario(text, None)
}
