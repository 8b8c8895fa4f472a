//! Unit conversions. Internally everything runs in minutes, cubic metres and
//! m³/min; the pond level is reported in cm and rain in mm/min.

/// Litres per second to cubic metres per minute.
pub fn l_per_s_to_m3_per_min(q: f64) -> f64 {
    q * 60.0 / 1000.0
}

pub fn m3_per_min_to_l_per_s(q: f64) -> f64 {
    q * 1000.0 / 60.0
}

pub fn mm_to_m(x: f64) -> f64 {
    x * 1e-3
}

pub fn cm_to_m(x: f64) -> f64 {
    x * 1e-2
}

pub fn m_to_cm(x: f64) -> f64 {
    x * 1e2
}

pub fn hectare_to_m2(x: f64) -> f64 {
    x * 1e4
}
