//! The desk-scale demo case: a clamped prismatic bar under a thermo-mechanical cycle.

use crate::loading::{demo_bar_schedule, LoadingSchedule};
use crate::material::{demo_material, Material};
use crate::mesh::{bar_mesh, BarSpec, ElementOrder, Mesh, BAR_LOADED_TAG};

pub const BAR_LENGTH: f64 = 100.0;
pub const BAR_SECTION: f64 = 10.0;
pub const PEAK_TRACTION: f64 = 380.0;
pub const HOT_TEMPERATURE: f64 = 600.0;

pub fn bar_spec() -> BarSpec {
    BarSpec {
        length: BAR_LENGTH,
        width: BAR_SECTION,
        height: BAR_SECTION,
        nx: 20,
        ny: 2,
        nz: 2,
        order: ElementOrder::Quadratic,
    }
}

/// Bar mesh partitioned into `n_subdomains` contiguous blocks.
pub fn bar(n_subdomains: usize) -> Mesh {
    let mut m = bar_mesh(&bar_spec());
    crate::ingestion::partition_mesh(&mut m, n_subdomains).expect("valid subdomain count");
    m
}

pub fn material() -> Material {
    demo_material()
}

pub fn schedule() -> LoadingSchedule {
    demo_bar_schedule(BAR_LENGTH, PEAK_TRACTION, HOT_TEMPERATURE, BAR_LOADED_TAG)
}
