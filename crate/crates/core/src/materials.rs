//! Optical constants: tabulated complex permittivity with piecewise-linear
//! interpolation, and simple dispersionless media.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

const GOLD_JC: &str = include_str!("../data/gold_johnson_christy.txt");

pub const WATER_INDEX: f64 = 1.33;
pub const SILICA_INDEX: f64 = 1.45;
pub const WATER_VISCOSITY: f64 = 1.0e-3;
pub const ROOM_TEMPERATURE: f64 = 293.0;
pub const GOLD_DENSITY: f64 = 19300.0;

/// Complex relative permittivity sampled at strictly increasing vacuum
/// wavelengths (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct PermittivityTable {
    entries: Vec<(f64, Complex64)>,
    source_label: String,
}

impl PermittivityTable {
    pub fn new(entries: Vec<(f64, Complex64)>, source_label: impl Into<String>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidTable(format!(
                "need at least 2 entries, got {}",
                entries.len()
            )));
        }
        for (i, w) in entries.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidTable(format!(
                    "wavelengths not strictly increasing at entry {}",
                    i + 1
                )));
            }
        }
        if entries
            .iter()
            .any(|(l, e)| !l.is_finite() || *l <= 0.0 || !e.re.is_finite() || !e.im.is_finite())
        {
            return Err(Error::InvalidTable("non-finite or non-positive entry".into()));
        }
        Ok(Self {
            entries,
            source_label: source_label.into(),
        })
    }

    /// Parses `wavelength_nm eps_real eps_imag` records; `#` starts a comment.
    pub fn parse(text: &str, source_label: impl Into<String>) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected 3 columns, found {}", fields.len()),
                });
            }
            let mut vals = [0.0; 3];
            for (v, f) in vals.iter_mut().zip(&fields) {
                *v = f.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("not a number: {f:?}"),
                })?;
            }
            entries.push((vals[0] / 1e9, Complex64::new(vals[1], vals[2])));
        }
        Self::new(entries, source_label)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.display().to_string())
    }

    /// Johnson & Christy gold, 381.5–1088 nm.
    pub fn gold() -> Self {
        Self::parse(GOLD_JC, "Au, Johnson & Christy (1972)").expect("bundled gold table is valid")
    }

    /// Constant permittivity over `[min, max]`, useful for non-dispersive
    /// or synthetic materials.
    pub fn constant(eps: Complex64, min_wavelength: f64, max_wavelength: f64) -> Result<Self> {
        Self::new(
            vec![(min_wavelength, eps), (max_wavelength, eps)],
            format!("constant {eps}"),
        )
    }

    pub fn entries(&self) -> &[(f64, Complex64)] {
        &self.entries
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    pub fn span(&self) -> (f64, f64) {
        (self.entries[0].0, self.entries[self.entries.len() - 1].0)
    }

    /// Linear interpolation of real and imaginary parts between the bracketing
    /// nodes.
    pub fn permittivity_at(&self, wavelength: f64) -> Result<Complex64> {
        let (min, max) = self.span();
        if !(wavelength >= min && wavelength <= max) {
            return Err(Error::WavelengthOutOfRange {
                wavelength_m: wavelength,
                min_m: min,
                max_m: max,
            });
        }
        let hi = self.entries.partition_point(|(l, _)| *l < wavelength);
        if self.entries[hi].0 == wavelength {
            return Ok(self.entries[hi].1);
        }
        let (l0, e0) = self.entries[hi - 1];
        let (l1, e1) = self.entries[hi];
        let t = (wavelength - l0) / (l1 - l0);
        Ok(Complex64::new(
            e0.re + t * (e1.re - e0.re),
            e0.im + t * (e1.im - e0.im),
        ))
    }
}

/// Surrounding fluid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediumSpec {
    refractive_index: f64,
    viscosity: f64,
    temperature: f64,
}

impl MediumSpec {
    pub fn new(refractive_index: f64, viscosity: f64, temperature: f64) -> Result<Self> {
        if !(refractive_index >= 1.0) || !refractive_index.is_finite() {
            return Err(invalid(format!("refractive index {refractive_index} must be >= 1")));
        }
        if !(viscosity > 0.0) || !viscosity.is_finite() {
            return Err(invalid(format!("viscosity {viscosity} must be > 0")));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(invalid(format!("temperature {temperature} must be > 0")));
        }
        Ok(Self {
            refractive_index,
            viscosity,
            temperature,
        })
    }

    /// Water at room temperature: n = 1.33, eta = 1 mPa s, T = 293 K.
    pub fn water() -> Self {
        Self::new(WATER_INDEX, WATER_VISCOSITY, ROOM_TEMPERATURE).expect("valid constants")
    }

    pub fn refractive_index(&self) -> f64 {
        self.refractive_index
    }

    pub fn permittivity(&self) -> f64 {
        self.refractive_index * self.refractive_index
    }

    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(self, temperature: f64) -> Result<Self> {
        Self::new(self.refractive_index, self.viscosity, temperature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_node() -> PermittivityTable {
        PermittivityTable::new(
            vec![
                (600e-9, Complex64::new(-10.0, 1.0)),
                (700e-9, Complex64::new(-16.0, 2.0)),
            ],
            "test",
        )
        .unwrap()
    }

    #[test]
    fn node_values_are_exact() {
        let gold = PermittivityTable::gold();
        for &(l, e) in gold.entries() {
            assert_eq!(gold.permittivity_at(l).unwrap(), e);
        }
    }

    #[test]
    fn midpoint_is_mean() {
        let t = two_node();
        let e = t.permittivity_at(650e-9).unwrap();
        assert!((e.re + 13.0).abs() < 1e-12);
        assert!((e.im - 1.5).abs() < 1e-12);
    }

    #[test]
    fn gold_at_640nm_matches_tabulation() {
        // Bracketing nodes 616.8 nm (n=0.21, k=3.272) and 659.5 nm (n=0.14, k=3.697).
        let e = PermittivityTable::gold().permittivity_at(640e-9).unwrap();
        let t = (640.0 - 616.8) / (659.5 - 616.8);
        let re = (0.21f64.powi(2) - 3.272f64.powi(2)) * (1.0 - t)
            + (0.14f64.powi(2) - 3.697f64.powi(2)) * t;
        let im = (2.0 * 0.21 * 3.272) * (1.0 - t) + (2.0 * 0.14 * 3.697) * t;
        assert!((e.re - re).abs() < 1e-5, "{} vs {}", e.re, re);
        assert!((e.im - im).abs() < 1e-5);
        assert!(e.re < -8.0);
        assert!(e.im > 0.5 && e.im < 3.0);
    }

    #[test]
    fn gold_is_metallic_in_visible_nir() {
        let gold = PermittivityTable::gold();
        for nm in (500..=900).step_by(5) {
            let e = gold.permittivity_at(nm as f64 * 1e-9).unwrap();
            assert!(e.re < 0.0 && e.im > 0.0, "{nm} nm: {e}");
        }
    }

    #[test]
    fn out_of_range_names_span() {
        let err = two_node().permittivity_at(800e-9).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::WavelengthOutOfRange { .. }));
        assert!(msg.contains("6.0000e-7") && msg.contains("7.0000e-7"), "{msg}");
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(PermittivityTable::new(vec![(1e-6, Complex64::new(1.0, 0.0))], "x").is_err());
        let unsorted = vec![
            (700e-9, Complex64::new(1.0, 0.0)),
            (600e-9, Complex64::new(1.0, 0.0)),
        ];
        assert!(PermittivityTable::new(unsorted, "x").is_err());
        assert!(PermittivityTable::parse("500 1 2\n600 1\n", "x").is_err());
        assert!(PermittivityTable::parse("500 1 2\n600 1 zz\n", "x").is_err());
    }

    #[test]
    fn parse_accepts_comments() {
        let t = PermittivityTable::parse("# header\n500 -1 2 # inline\n\n600 -2 3\n", "x").unwrap();
        assert_eq!(t.entries().len(), 2);
        assert_eq!(t.span(), (500e-9, 600e-9));
    }

    #[test]
    fn water_permittivity_is_index_squared() {
        let w = MediumSpec::water();
        assert!((w.permittivity() - 1.7689).abs() < 1e-12);
        assert!(MediumSpec::new(1.33, 0.0, 293.0).is_err());
        assert!(MediumSpec::new(1.33, 1e-3, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn interpolation_bounded_by_neighbours(nm in 381.5f64..1088.0) {
            let gold = PermittivityTable::gold();
            let l = nm * 1e-9;
            let e = gold.permittivity_at(l).unwrap();
            let hi = gold.entries().partition_point(|(x, _)| *x < l).max(1);
            let (a, b) = (gold.entries()[hi - 1].1, gold.entries()[hi].1);
            prop_assert!(e.re >= a.re.min(b.re) - 1e-12 && e.re <= a.re.max(b.re) + 1e-12);
            prop_assert!(e.im >= a.im.min(b.im) - 1e-12 && e.im <= a.im.max(b.im) + 1e-12);
        }

        #[test]
        fn interpolation_is_continuous(nm in 382.0f64..1087.0) {
            let gold = PermittivityTable::gold();
            let a = gold.permittivity_at(nm * 1e-9).unwrap();
            let b = gold.permittivity_at((nm + 1e-6) * 1e-9).unwrap();
            prop_assert!((a - b).norm() < 1e-5);
        }
    }
}
