//! The Meuse river zinc data (155 topsoil samples), bundled from the R `sp`
//! package (GPL-3.0; Pebesma and Bivand, 2005).

use std::path::Path;

use crate::data::{read_assay, AssaySchema, Dataset, RawAssay};
use crate::error::Result;

const MEUSE_CSV: &str = include_str!("../data/meuse.csv");

/// Easting and northing in meters and zinc in ppm.
pub fn meuse_raw() -> Result<RawAssay> {
    let schema = AssaySchema {
        hole_id: None,
        coords: vec!["x".into(), "y".into()],
        value: "zinc".into(),
        censored: None,
        detection_limit: None,
    };
    read_assay(MEUSE_CSV.as_bytes(), Path::new("meuse.csv"), &schema)
}

/// Coordinates coded to the unit square; response is centered log zinc.
pub fn meuse() -> Result<Dataset> {
    meuse_raw()?.code(true)
}
