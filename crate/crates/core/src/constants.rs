//! Physical constants (SI) and the nuclear spin used throughout.

pub const H_PLANCK: f64 = 6.626_070_15e-34;
pub const E_CHARGE: f64 = 1.602_176_634e-19;
pub const MU0_OVER_4PI: f64 = 1.000_000_000_55e-7;
pub const EPS0: f64 = 8.854_187_818_8e-12;
/// Bohr magneton over h, Hz/T.
pub const MU_B_OVER_H: f64 = 13.996_244_936_1e9;
/// Debye in C·m.
pub const DEBYE: f64 = 3.335_640_95e-30;
pub const ANGSTROM: f64 = 1e-10;

/// Nuclear spin of 93Nb.
pub const I_NB: f64 = 4.5;
/// Nuclear gyromagnetic ratio of 93Nb used to convert fitted fields, Hz/T.
pub const GAMMA_NB: f64 = 10.4213e6;
