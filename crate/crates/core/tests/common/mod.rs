#![allow(dead_code)]

use nalgebra::DVector;
use vflip_core::liouville::sample_liouville;
use vflip_core::model::{random_spd, SystemSpec};
use vflip_core::rng::{stream_rng, AUXILIARY_STREAM};
use vflip_core::State;

pub fn spec7() -> SystemSpec {
    SystemSpec::decompose(random_spd(3, 7, (0.5, 2.0)), 0.5).unwrap()
}

pub fn random_spec(n: usize, seed: u64) -> SystemSpec {
    SystemSpec::decompose(random_spd(n, seed, (0.5, 2.0)), 0.5).unwrap()
}

pub fn surface_state(spec: &SystemSpec, seed: u64) -> State {
    sample_liouville(spec, &mut stream_rng(seed, AUXILIARY_STREAM))
}

pub fn to_dvec(s: &State) -> DVector<f64> {
    DVector::from_vec(s.to_vec())
}

pub fn from_dvec(x: &DVector<f64>) -> State {
    State::from_slice(x.as_slice())
}
