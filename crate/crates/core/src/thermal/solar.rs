use serde::Serialize;

use crate::topology::{Orientation, ZoneId};
use crate::weather::SunPosition;

use super::ThermalModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SurfaceTilt {
    Vertical,
    /// Facing up.
    Horizontal,
}

/// An exterior face exposed to the sky.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolarSurface {
    pub zone: ZoneId,
    pub ori: Orientation,
    /// Outward normal azimuth, degrees clockwise from north.
    pub azimuth: f64,
    pub tilt: SurfaceTilt,
    /// Zone air node and `g·A_gla`, m².
    pub transmit: Option<(usize, f64)>,
    /// Outermost opaque node and `α·A_opeq`, m².
    pub absorb: Option<(usize, f64)>,
}

/// Irradiance on a surface, W/m². `i_dir` is beam irradiance normal to the
/// sun; diffuse is isotropic.
pub fn incident_irradiance(
    tilt: SurfaceTilt,
    azimuth: f64,
    sun: SunPosition,
    i_dir: f64,
    i_diff: f64,
    diffuse_view_vertical: f64,
) -> f64 {
    let el = sun.elevation.to_radians();
    let beam = if sun.elevation <= 0.0 {
        0.0
    } else {
        match tilt {
            SurfaceTilt::Horizontal => el.sin(),
            SurfaceTilt::Vertical => (el.cos() * (sun.azimuth - azimuth).to_radians().cos()).max(0.0),
        }
    };
    let view = match tilt {
        SurfaceTilt::Horizontal => 1.0,
        SurfaceTilt::Vertical => diffuse_view_vertical,
    };
    beam * i_dir + view * i_diff
}

/// Solar gains for one sun position, W.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolarGains {
    /// Per surface, through glazing to zone air.
    pub transmitted: Vec<f64>,
    /// Per surface, absorbed at the outer opaque node.
    pub absorbed: Vec<f64>,
}

impl SolarGains {
    /// `(node, W)` pairs.
    pub fn node_sources(&self, model: &ThermalModel) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for (i, s) in model.solar.iter().enumerate() {
            if let Some((n, _)) = s.transmit {
                out.push((n, self.transmitted[i]));
            }
            if let Some((n, _)) = s.absorb {
                out.push((n, self.absorbed[i]));
            }
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.transmitted.iter().sum::<f64>() + self.absorbed.iter().sum::<f64>()
    }
}

pub fn solar_gains(model: &ThermalModel, sun: SunPosition, i_dir: f64, i_diff: f64) -> SolarGains {
    let mut g = SolarGains::default();
    for s in &model.solar {
        let inc = incident_irradiance(s.tilt, s.azimuth, sun, i_dir, i_diff, model.physics.diffuse_view_vertical);
        g.transmitted.push(s.transmit.map_or(0.0, |(_, a)| a * inc));
        g.absorbed.push(s.absorb.map_or(0.0, |(_, a)| a * inc));
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn south_window_at_low_sun() {
        let sun = SunPosition {
            azimuth: 180.0,
            elevation: 1e-9,
        };
        let inc = incident_irradiance(SurfaceTilt::Vertical, 180.0, sun, 800.0, 0.0, 0.5);
        assert!((inc * 2.0 * 0.6 - 960.0).abs() < 1e-6);
    }

    #[test]
    fn sun_behind_face_gives_diffuse_only() {
        let sun = SunPosition {
            azimuth: 0.0,
            elevation: 30.0,
        };
        let inc = incident_irradiance(SurfaceTilt::Vertical, 180.0, sun, 800.0, 100.0, 0.5);
        assert_eq!(inc, 50.0);
    }

    #[test]
    fn roof_uses_horizontal_projection() {
        let sun = SunPosition {
            azimuth: 123.0,
            elevation: 30.0,
        };
        let inc = incident_irradiance(SurfaceTilt::Horizontal, 0.0, sun, 800.0, 0.0, 0.5);
        assert!((inc - 400.0).abs() < 1e-9);
    }

    #[test]
    fn night_is_dark() {
        let sun = SunPosition {
            azimuth: 0.0,
            elevation: -5.0,
        };
        for tilt in [SurfaceTilt::Vertical, SurfaceTilt::Horizontal] {
            assert_eq!(incident_irradiance(tilt, 0.0, sun, 800.0, 0.0, 0.5), 0.0);
        }
    }
}
