//! Published measurement tables and fitted values used as fixtures.

use crate::error::Result;
use crate::inference::{DataEntry, DataKind, FrequencyDataset};

/// `ω↓(n, n+1)`, Hz, n = 0..8.
pub const GROUND_HZ: [f64; 9] = [
    7560562.0, 6894745.1, 6227459.8, 5557759.9, 4883861.9, 4202128.8, 3504133.1, 2774604.8, 1822491.2,
];
pub const GROUND_SIGMA_HZ: f64 = 1.0;

/// `ω↑ − ω↓`, Hz.
pub const EXCITED_DIFF_HZ: [f64; 9] = [
    -136547.0, -135922.0, -135196.0, -134203.0, -132832.0, -130986.0, -128470.0, -122551.0, -128757.0,
];
pub const EXCITED_DIFF_SIGMA_HZ: [f64; 9] = [45.0, 30.0, 24.0, 28.0, 22.0, 18.0, 16.0, 20.0, 18.0];

/// `Δω_n = ω↓(n+1, n+2) − ω↓(n, n+1)`, Hz.
pub const DIFFERENTIAL_HZ: [f64; 8] = [
    -665817.024,
    -667285.451,
    -669699.820,
    -673897.780,
    -681733.070,
    -697995.572,
    -729528.188,
    -952113.738,
];
pub const DIFFERENTIAL_SIGMA_HZ: [f64; 8] = [0.005, 0.007, 0.007, 0.006, 0.010, 0.007, 0.025, 0.031];

pub const GROUND_CSV: &str = include_str!("../data/nmr.csv");
pub const DIFFERENTIAL_CSV: &str = include_str!("../data/differential.csv");
pub const CRYSTAL_FIELD_TOML: &str = include_str!("../data/crystal_field_placeholder.toml");

/// Published medians, SI units, keyed like the fit parameters.
pub struct Published {
    pub name: &'static str,
    pub value: f64,
    pub sd: f64,
}

const fn p(name: &'static str, value: f64, sd: f64) -> Published {
    Published { name, value, sd }
}

pub const GROUND_MEDIANS: [Published; 5] = [
    p("b0", 460.54333e-3, 0.00008e-3),
    p("s0", -237.3530e3, 0.1),
    p("s1", 2.667e3, 8.0),
    p("s2", 149.443e3, 1.0),
    p("delta", -0.002, 0.060),
];

pub const EXCITED_MEDIANS: [Published; 5] = [
    p("b0", 447.732e-3, 0.007e-3),
    p("s0", -237.224e3, 11.0),
    p("s1", 6.1e3, 300.0),
    p("s2", 149.48e3, 80.0),
    p("delta", -0.01, 0.24),
];

/// Signed values as printed; `s1 < 0` and `s2 < 0` are equivalent to
/// `ζ + π` and `Δ + π/2` with positive magnitudes.
pub const FULL_MEDIANS: [Published; 8] = [
    p("b0", 454.129e-3, 0.001e-3),
    p("a_par", 133.497e3, 8.0),
    p("s0", -237.299e3, 1.0),
    p("s1", -4.36e3, 10.0),
    p("s2", -149.435e3, 1.0),
    p("delta", 1.39, 0.01),
    p("zeta", -0.82, 0.01),
    p("q_sdq", 66.0, 6.0),
];

pub const HEX_MEDIANS: [Published; 5] = [
    p("s0", -237.35414e3, 0.01),
    p("s1", 2.7320e3, 0.7),
    p("s2", 149.4515e3, 0.1),
    p("delta", 0.1858, 0.0008),
    p("c4", 9.6, 0.1),
];

pub const GROUND_CHI2_RED: f64 = 0.75;
pub const EXCITED_CHI2_RED: f64 = 1.14;
pub const FULL_CHI2_RED: f64 = 1.2;
pub const OCTUPOLE_C3: f64 = 24.1;
pub const A_PERP_HZ: (f64, f64) = (55e3, 9e3);

pub fn lookup(table: &[Published], name: &str) -> Option<f64> {
    table.iter().find(|p| p.name == name).map(|p| p.value)
}

/// Ground and excited tables together.
pub fn nmr_dataset() -> Result<FrequencyDataset> {
    FrequencyDataset::read_csv(GROUND_CSV.as_bytes())
}

pub fn differential_dataset() -> Result<FrequencyDataset> {
    FrequencyDataset::read_csv(DIFFERENTIAL_CSV.as_bytes())
}

/// Same tables built from the constants.
pub fn nmr_dataset_from_constants() -> Result<FrequencyDataset> {
    let mut e: Vec<DataEntry> = GROUND_HZ
        .iter()
        .enumerate()
        .map(|(id, &v)| DataEntry {
            id,
            kind: DataKind::Ground,
            value_hz: v,
            sigma_hz: GROUND_SIGMA_HZ,
        })
        .collect();
    e.extend(
        EXCITED_DIFF_HZ
            .iter()
            .zip(EXCITED_DIFF_SIGMA_HZ)
            .enumerate()
            .map(|(id, (&v, s))| DataEntry {
                id,
                kind: DataKind::ExcitedDiff,
                value_hz: v,
                sigma_hz: s,
            }),
    );
    FrequencyDataset::new(e)
}
