//! Multi-zone building thermal simulation driven by a face-level topology.
//!
//! A [`BuildingTopology`](topology::BuildingTopology) of box-shaped zones and
//! their six faces compiles into one of two networks:
//!
//! * the ideal-load model ([`thermal::compile_lofi`]), where each zone gets a
//!   heater that exactly holds its setpoint, and
//! * the hydronic model ([`hydronic::compile_hifi`]), which adds underfloor
//!   pipe volumes and radiators fed by supply temperature and mass flow.
//!
//! Both run on the same implicit-Euler [`engine`]. The [`calibration`]
//! module tunes pipe spacing and slab-to-air coefficients against measured
//! zone and return temperatures, and [`benchmark`] runs neighbourhoods of
//! buildings through a heating-season protocol.
//!
//! ```
//! use hydrozone::engine::{simulate, EngineConfig, HeatingPeriod, SimInputs};
//! use hydrozone::synthetic::analytic_box;
//! use hydrozone::thermal::{compile_lofi, DiscretizationPolicy, PhysicsConfig};
//! use hydrozone::weather::WeatherSeries;
//!
//! let physics = PhysicsConfig { ach: 0.0, ..PhysicsConfig::default() };
//! let topo = analytic_box(100.0, 21.0, &physics);
//! let model = compile_lofi(&topo, &DiscretizationPolicy::default(), &physics).unwrap();
//! let weather = WeatherSeries::constant(0.0, 2.0 * 86_400.0, 1.0, 0.0);
//! let cfg = EngineConfig { heating: HeatingPeriod::Always, ..EngineConfig::lofi() };
//! let inputs = SimInputs::default();
//! let r = simulate(&model, &weather, &inputs, 0.0, 2.0 * 86_400.0, &cfg).unwrap();
//! let last = *r.q_heat[0].last().unwrap();
//! assert!((last - 2000.0).abs() < 20.0);
//! ```

pub mod benchmark;
pub mod calibration;
pub mod engine;
pub mod hydronic;
pub mod series;
pub mod sparse;
pub mod synthetic;
pub mod thermal;
pub mod topology;
pub mod weather;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/topology.md")]
    mod topology {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/hydronics.md")]
    mod hydronics {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
}
