//! Car-following laboratory for voluntary takeover of automated vehicles.

pub mod calibration;
pub mod cf;
pub mod error;
pub mod intervention;
pub mod kinematics;
pub mod metrics;
pub mod platoon;
pub mod rl;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/car-following.md")]
    mod car_following {}
    #[doc = include_str!("../../../book/src/evidence.md")]
    mod evidence {}
    #[doc = include_str!("../../../book/src/platoon.md")]
    mod platoon {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
