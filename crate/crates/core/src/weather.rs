//! Weather series and sun position.

use std::f64::consts::PI;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::series::{SeriesError, Table, UniformGrid};

/// Site used to compute the sun path when a weather file carries no sun
/// columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    /// Degrees north.
    pub latitude: f64,
    /// Degrees east.
    pub longitude: f64,
    /// Hours ahead of UTC for the local standard time used by `time_s`.
    pub utc_offset_h: f64,
}

impl Default for Site {
    fn default() -> Self {
        // Central European site at UTC+1.
        Self {
            latitude: 50.8,
            longitude: 4.35,
            utc_offset_h: 1.0,
        }
    }
}

/// Sun position in degrees; azimuth clockwise from north.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SunPosition {
    pub azimuth: f64,
    pub elevation: f64,
}

/// Sun position at `time_s` seconds after January 1, 00:00 local standard
/// time, using the NOAA low-precision series (declination and equation of
/// time as Fourier expansions in the fractional year).
pub fn sun_position(site: &Site, time_s: f64) -> SunPosition {
    let day_index = (time_s / 86_400.0).floor();
    let hour = (time_s - day_index * 86_400.0) / 3600.0;
    let year_days = 365.0;
    let g = 2.0 * PI / year_days * (day_index + (hour - 12.0) / 24.0);
    let eqtime = 229.18
        * (0.000075 + 0.001868 * g.cos() - 0.032077 * g.sin() - 0.014615 * (2.0 * g).cos() - 0.040849 * (2.0 * g).sin());
    let decl = 0.006918 - 0.399912 * g.cos() + 0.070257 * g.sin() - 0.006758 * (2.0 * g).cos() + 0.000907 * (2.0 * g).sin()
        - 0.002697 * (3.0 * g).cos()
        + 0.00148 * (3.0 * g).sin();
    let offset_min = eqtime + 4.0 * site.longitude - 60.0 * site.utc_offset_h;
    let true_solar_min = hour * 60.0 + offset_min;
    let hour_angle = (true_solar_min / 4.0 - 180.0).to_radians();
    let lat = site.latitude.to_radians();

    let cos_zen = (lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos()).clamp(-1.0, 1.0);
    let elevation = 90.0 - cos_zen.acos().to_degrees();
    let az_south = hour_angle.sin().atan2(hour_angle.cos() * lat.sin() - decl.tan() * lat.cos());
    let azimuth = (az_south.to_degrees() + 180.0).rem_euclid(360.0);
    SunPosition { azimuth, elevation }
}

/// Weather on a uniform time grid. Irradiances in W/m², with `dir` being
/// beam irradiance on a sun-facing plane.
#[derive(Clone, Debug, PartialEq)]
pub struct WeatherSeries {
    pub grid: UniformGrid,
    pub t_amb: Vec<f64>,
    pub wind: Vec<f64>,
    pub i_dir: Vec<f64>,
    pub i_diff: Vec<f64>,
    pub sun_az: Vec<f64>,
    pub sun_el: Vec<f64>,
}

impl WeatherSeries {
    /// Constant conditions over `[start, end]` sampled hourly, sun below the
    /// horizon.
    pub fn constant(start: f64, end: f64, t_amb: f64, wind: f64) -> Self {
        let step = 3600.0;
        let len = ((end - start) / step).ceil() as usize + 1;
        Self {
            grid: UniformGrid { start, step, len },
            t_amb: vec![t_amb; len],
            wind: vec![wind; len],
            i_dir: vec![0.0; len],
            i_diff: vec![0.0; len],
            sun_az: vec![180.0; len],
            sun_el: vec![-10.0; len],
        }
    }

    /// Builds a series from per-sample closures; sun position from `site`.
    pub fn from_fn(
        grid: UniformGrid,
        site: &Site,
        mut sample: impl FnMut(f64) -> (f64, f64, f64, f64),
    ) -> Self {
        let mut w = Self {
            grid,
            t_amb: Vec::with_capacity(grid.len),
            wind: Vec::with_capacity(grid.len),
            i_dir: Vec::with_capacity(grid.len),
            i_diff: Vec::with_capacity(grid.len),
            sun_az: Vec::with_capacity(grid.len),
            sun_el: Vec::with_capacity(grid.len),
        };
        for i in 0..grid.len {
            let t = grid.time(i);
            let (ta, wind, dir, diff) = sample(t);
            let sun = sun_position(site, t);
            w.t_amb.push(ta);
            w.wind.push(wind);
            w.i_dir.push(dir);
            w.i_diff.push(diff);
            w.sun_az.push(sun.azimuth);
            w.sun_el.push(sun.elevation);
        }
        w
    }

    pub fn len(&self) -> usize {
        self.grid.len
    }

    pub fn is_empty(&self) -> bool {
        self.grid.len == 0
    }

    pub fn covers(&self, t0: f64, t1: f64) -> bool {
        self.grid.covers(t0, t1)
    }

    pub fn sun(&self, i: usize) -> SunPosition {
        SunPosition {
            azimuth: self.sun_az[i],
            elevation: self.sun_el[i],
        }
    }

    /// Extracts weather columns from a table; computes the sun path from
    /// `site` when `sun_az_deg`/`sun_el_deg` are absent.
    pub fn from_table(table: &Table, site: &Site) -> Result<Self, SeriesError> {
        let grid = table.grid;
        let t_amb = table.column("T_amb_C")?.to_vec();
        let wind = table.column("wind_ms")?.to_vec();
        let i_dir = table.column("I_dir_Wm2")?.to_vec();
        let i_diff = table.column("I_diff_Wm2")?.to_vec();
        if wind.iter().any(|&v| v < 0.0) {
            return Err(SeriesError::Invalid("wind speed must be >= 0".into()));
        }
        if i_dir.iter().chain(&i_diff).any(|&v| v < 0.0) {
            return Err(SeriesError::Invalid("irradiance must be >= 0".into()));
        }
        let (sun_az, sun_el) = match (table.columns.get("sun_az_deg"), table.columns.get("sun_el_deg")) {
            (Some(az), Some(el)) => (az.clone(), el.clone()),
            (None, None) => (0..grid.len)
                .map(|i| {
                    let s = sun_position(site, grid.time(i));
                    (s.azimuth, s.elevation)
                })
                .unzip(),
            _ => return Err(SeriesError::Invalid("sun_az_deg and sun_el_deg must be given together".into())),
        };
        Ok(Self {
            grid,
            t_amb,
            wind,
            i_dir,
            i_diff,
            sun_az,
            sun_el,
        })
    }

    pub fn read<R: Read>(reader: R, site: &Site) -> Result<Self, SeriesError> {
        Self::from_table(&Table::read(reader)?, site)
    }

    pub fn write<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let times: Vec<f64> = (0..self.grid.len).map(|i| self.grid.time(i)).collect();
        crate::series::write_csv(
            writer,
            &times,
            &[
                ("T_amb_C".into(), &self.t_amb),
                ("wind_ms".into(), &self.wind),
                ("I_dir_Wm2".into(), &self.i_dir),
                ("I_diff_Wm2".into(), &self.i_diff),
                ("sun_az_deg".into(), &self.sun_az),
                ("sun_el_deg".into(), &self.sun_el),
            ],
        )
    }

    /// Rotates the sun path by `degrees` (clockwise).
    pub fn rotated(&self, degrees: f64) -> Self {
        let mut w = self.clone();
        for az in &mut w.sun_az {
            *az = (*az + degrees).rem_euclid(360.0);
        }
        w
    }
}
