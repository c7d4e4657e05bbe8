//! Memristive device envelope and the N×M conductance matrix.
//!
//! Conductances are kept as analog SI values. The logical weight seen by the
//! learning rule is `g / g_max`, which can never drop below the device floor
//! `g_min / g_max`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SslcaError};
use crate::matrix::Matrix;

/// Conductance envelope and read voltage of one memristor technology.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    /// Siemens.
    pub g_min: f64,
    /// Siemens.
    pub g_max: f64,
    /// Volts applied to an active row during inference.
    pub v_read: f64,
}

impl Default for DeviceModel {
    fn default() -> Self {
        DeviceModel {
            g_min: 4.830918e-6,
            g_max: 19.23077e-6,
            v_read: 0.7,
        }
    }
}

impl DeviceModel {
    pub fn new(g_min: f64, g_max: f64, v_read: f64) -> Result<Self> {
        let d = DeviceModel { g_min, g_max, v_read };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_min > 0.0 && self.g_min < self.g_max && self.g_max.is_finite()) {
            return Err(SslcaError::Domain(format!(
                "device needs 0 < g_min < g_max, got g_min={} g_max={}",
                self.g_min, self.g_max
            )));
        }
        if !(self.v_read > 0.0 && self.v_read.is_finite()) {
            return Err(SslcaError::Domain(format!(
                "v_read must be positive, got {}",
                self.v_read
            )));
        }
        Ok(())
    }

    /// Smallest representable logical weight, `g_min / g_max`.
    #[inline]
    pub fn weight_floor(&self) -> f64 {
        self.g_min / self.g_max
    }

    pub fn on_off_ratio(&self) -> f64 {
        self.g_max / self.g_min
    }

    #[inline]
    pub fn clamp(&self, g: f64) -> f64 {
        g.clamp(self.g_min, self.g_max)
    }
}

/// Conductance deviations applied at read time and when programming devices.
///
/// Each field is the half-width of a uniform multiplicative deviation, so
/// `0.4` means every affected conductance is scaled by a factor in `[0.6, 1.4]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariabilityConfig {
    pub read_dev: f64,
    pub write_dev_offline: f64,
    pub write_dev_online: f64,
    pub seed: u64,
}

impl VariabilityConfig {
    pub fn none() -> Self {
        Self::default()
    }

    /// Rejects negative deviations and returns warnings for values outside the
    /// ranges that have been characterised (`±80%` read, `±180%` offline write,
    /// `±30%` online write).
    pub fn validate(&self) -> Result<Vec<String>> {
        let fields = [
            ("read_dev", self.read_dev, 0.80),
            ("write_dev_offline", self.write_dev_offline, 1.80),
            ("write_dev_online", self.write_dev_online, 0.30),
        ];
        let mut warnings = Vec::new();
        for (name, v, tested) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SslcaError::Config(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
            if v > tested {
                warnings.push(format!("{name}={v} exceeds the characterised range of ±{tested}"));
            }
        }
        Ok(warnings)
    }

    pub fn is_ideal(&self) -> bool {
        self.read_dev == 0.0 && self.write_dev_offline == 0.0 && self.write_dev_online == 0.0
    }
}

/// N inputs × M neurons of programmed conductances.
#[derive(Clone, Debug, PartialEq)]
pub struct Crossbar {
    device: DeviceModel,
    conductance: Matrix,
}

impl Crossbar {
    /// Every device at `g_min`.
    pub fn new(rows: usize, cols: usize, device: DeviceModel) -> Result<Self> {
        device.validate()?;
        Ok(Crossbar {
            device,
            conductance: Matrix::filled(rows, cols, device.g_min),
        })
    }

    /// Programs a crossbar directly from logical weights.
    pub fn from_weights(weights: &Matrix, device: DeviceModel) -> Result<Self> {
        let mut xb = Crossbar::new(weights.rows(), weights.cols(), device)?;
        xb.set_weights(weights)?;
        Ok(xb)
    }

    /// Wraps a conductance matrix; every entry must lie in `[g_min, g_max]`.
    pub fn from_conductance(conductance: Matrix, device: DeviceModel) -> Result<Self> {
        device.validate()?;
        let tol = 1e-12 * device.g_max;
        if let Some(&g) = conductance
            .as_slice()
            .iter()
            .find(|&&g| !(g >= device.g_min - tol && g <= device.g_max + tol))
        {
            return Err(SslcaError::Domain(format!(
                "conductance {g} outside [{}, {}]",
                device.g_min, device.g_max
            )));
        }
        Ok(Crossbar { device, conductance })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.conductance.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.conductance.cols()
    }

    pub fn device(&self) -> &DeviceModel {
        &self.device
    }

    pub fn conductance(&self) -> &Matrix {
        &self.conductance
    }

    pub fn weight_of(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.rows() || j >= self.cols() {
            return Err(SslcaError::Index {
                row: i,
                col: j,
                rows: self.rows(),
                cols: self.cols(),
            });
        }
        Ok(self.conductance.get(i, j) / self.device.g_max)
    }

    /// Logical weight view `G / g_max`, bounded below by the device floor.
    pub fn weights(&self) -> Matrix {
        let g_max = self.device.g_max;
        self.conductance.map(|g| g / g_max)
    }

    /// Weight view with devices sitting at the floor read as exact zeros.
    /// Used when scoring reconstructions as if zero were representable.
    pub fn weights_zero_floor(&self) -> Matrix {
        let g_max = self.device.g_max;
        let cut = self.device.g_min * (1.0 + 1e-9);
        self.conductance.map(|g| if g <= cut { 0.0 } else { g / g_max })
    }

    /// Programs `g = max(g_min, w · g_max)` for every device.
    pub fn set_weights(&mut self, weights: &Matrix) -> Result<()> {
        if weights.shape() != self.conductance.shape() {
            return Err(SslcaError::dims(
                format!("{:?}", self.conductance.shape()),
                format!("{:?}", weights.shape()),
            ));
        }
        if let Some(&w) = weights.as_slice().iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(SslcaError::Domain(format!("weight {w} outside [0, 1]")));
        }
        let d = self.device;
        for (g, &w) in self.conductance.as_mut_slice().iter_mut().zip(weights.as_slice()) {
            *g = d.g_min.max(w * d.g_max);
        }
        Ok(())
    }

    /// Writes one device, clamping into the device envelope.
    pub fn program(&mut self, i: usize, j: usize, g: f64) {
        let g = self.device.clamp(g);
        self.conductance.set(i, j, g);
    }

    /// Offline programming with write deviation: each device is rewritten as
    /// `perturb_write(g, dev)` and clamped into the device envelope.
    pub fn perturb_offline<R: Rng + ?Sized>(&self, write_dev: f64, rng: &mut R) -> Crossbar {
        let mut out = self.clone();
        if write_dev == 0.0 {
            return out;
        }
        for g in out.conductance.as_mut_slice() {
            *g = self.device.clamp(perturb_write(*g, write_dev, rng));
        }
        out
    }

    pub fn perturb_read<R: Rng + ?Sized>(&self, read_dev: f64, rng: &mut R) -> Matrix {
        perturb_read(&self.conductance, read_dev, rng)
    }

    pub fn save(&self, path: &Path, extension: Option<serde_json::Value>) -> Result<()> {
        let file = CrossbarFile::from_crossbar(self, extension);
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Crossbar, Option<serde_json::Value>)> {
        let text = std::fs::read_to_string(path)?;
        let file: CrossbarFile = serde_json::from_str(&text)?;
        file.into_crossbar()
    }
}

/// Effective conductances for one read interval: `g' = g·(1+u)`,
/// `u ~ U(-dev, dev)` drawn independently per device. The source is untouched.
pub fn perturb_read<R: Rng + ?Sized>(conductance: &Matrix, read_dev: f64, rng: &mut R) -> Matrix {
    if read_dev == 0.0 {
        return conductance.clone();
    }
    let mut out = conductance.clone();
    for g in out.as_mut_slice() {
        let u: f64 = rng.gen_range(-read_dev..=read_dev);
        *g = (*g * (1.0 + u)).max(0.0);
    }
    out
}

/// Programmed conductance after a noisy write: `max(0, g·(1+u))`.
pub fn perturb_write<R: Rng + ?Sized>(g_target: f64, write_dev: f64, rng: &mut R) -> f64 {
    if write_dev == 0.0 {
        return g_target;
    }
    let u: f64 = rng.gen_range(-write_dev..=write_dev);
    (g_target * (1.0 + u)).max(0.0)
}

pub const CROSSBAR_FORMAT: &str = "sslca-crossbar";
pub const CROSSBAR_FORMAT_VERSION: u32 = 1;

/// On-disk crossbar snapshot: dimensions, device constants and the row-major
/// conductance array in siemens. `extension` carries optional blocks such as
/// training state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossbarFile {
    pub format: String,
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
    pub device: DeviceModel,
    pub conductance: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extension: Option<serde_json::Value>,
}

impl CrossbarFile {
    pub fn from_crossbar(xb: &Crossbar, extension: Option<serde_json::Value>) -> Self {
        CrossbarFile {
            format: CROSSBAR_FORMAT.to_string(),
            version: CROSSBAR_FORMAT_VERSION,
            rows: xb.rows(),
            cols: xb.cols(),
            device: xb.device,
            conductance: xb.conductance.as_slice().to_vec(),
            extension,
        }
    }

    pub fn into_crossbar(self) -> Result<(Crossbar, Option<serde_json::Value>)> {
        if self.format != CROSSBAR_FORMAT {
            return Err(SslcaError::Data(format!("unknown snapshot format {:?}", self.format)));
        }
        if self.version != CROSSBAR_FORMAT_VERSION {
            return Err(SslcaError::Data(format!(
                "unsupported snapshot version {}",
                self.version
            )));
        }
        let m = Matrix::from_vec(self.rows, self.cols, self.conductance)?;
        Ok((Crossbar::from_conductance(m, self.device)?, self.extension))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn xb_with(g: f64) -> Crossbar {
        let d = DeviceModel::default();
        Crossbar::from_conductance(Matrix::filled(2, 2, g), d).unwrap()
    }

    #[test]
    fn weight_of_matches_examples() {
        let d = DeviceModel::default();
        assert_eq!(xb_with(d.g_max).weight_of(0, 0).unwrap(), 1.0);
        assert!((xb_with(d.g_min).weight_of(1, 1).unwrap() - 0.2512).abs() < 1e-4);
        let mid = xb_with(0.5 * (d.g_min + d.g_max)).weight_of(0, 1).unwrap();
        assert!((mid - 0.6256).abs() < 1e-4, "{mid}");
    }

    #[test]
    fn weight_of_rejects_bad_index() {
        let xb = xb_with(DeviceModel::default().g_max);
        assert!(matches!(xb.weight_of(2, 0), Err(SslcaError::Index { .. })));
        assert!(matches!(xb.weight_of(0, 5), Err(SslcaError::Index { .. })));
    }

    #[test]
    fn default_device_has_ratio_near_four() {
        let d = DeviceModel::default();
        assert!((d.on_off_ratio() - 3.98).abs() < 0.01);
    }

    #[test]
    fn set_weights_floor_and_scale() {
        let d = DeviceModel::default();
        let w = Matrix::from_vec(1, 3, vec![1.0, 0.0, 0.5]).unwrap();
        let xb = Crossbar::from_weights(&w, d).unwrap();
        assert_eq!(xb.conductance().get(0, 0), d.g_max);
        assert_eq!(xb.conductance().get(0, 1), d.g_min);
        assert!((xb.conductance().get(0, 2) - 9.615385e-6).abs() < 1e-11);
    }

    #[test]
    fn set_weights_shape_mismatch() {
        let mut xb = Crossbar::new(2, 2, DeviceModel::default()).unwrap();
        let w = Matrix::zeros(3, 2);
        assert!(matches!(xb.set_weights(&w), Err(SslcaError::Dimension { .. })));
    }

    #[test]
    fn bad_device_rejected() {
        assert!(DeviceModel::new(2e-6, 1e-6, 0.7).is_err());
        assert!(DeviceModel::new(0.0, 1e-6, 0.7).is_err());
    }

    #[test]
    fn read_perturbation_bounds_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xb = xb_with(1e-5);
        assert_eq!(xb.perturb_read(0.0, &mut rng), *xb.conductance());
        let p = xb.perturb_read(0.4, &mut rng);
        for &g in p.as_slice() {
            assert!((0.6e-5..=1.4e-5).contains(&g));
        }
        assert!(xb.conductance().as_slice().iter().all(|&g| g == 1e-5));
    }

    #[test]
    fn read_perturbation_std_at_eighty_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Matrix::filled(1000, 100, 1.0);
        let p = perturb_read(&m, 0.8, &mut rng);
        let n = p.as_slice().len() as f64;
        let mean = p.as_slice().iter().sum::<f64>() / n;
        let var = p.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 0.46).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn write_perturbation_clamps_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(perturb_write(1e-6, 0.0, &mut rng), 1e-6);
        let mut saw_zero = false;
        for _ in 0..10_000 {
            let g = perturb_write(1e-6, 1.8, &mut rng);
            assert!((0.0..=2.8e-6 + 1e-18).contains(&g));
            saw_zero |= g == 0.0;
        }
        assert!(saw_zero);
    }

    #[test]
    fn write_perturbation_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mean = (0..n).map(|_| perturb_write(1.0, 0.3, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn perturbation_is_reproducible() {
        let xb = xb_with(1e-5);
        let a = xb.perturb_read(0.5, &mut ChaCha8Rng::seed_from_u64(42));
        let b = xb.perturb_read(0.5, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn variability_validation() {
        let mut v = VariabilityConfig::none();
        assert!(v.validate().unwrap().is_empty());
        v.read_dev = 0.9;
        assert_eq!(v.validate().unwrap().len(), 1);
        v.write_dev_online = -0.1;
        assert!(v.validate().is_err());
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = std::env::temp_dir().join(format!("sslca-xb-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("xb.json");
        let w = Matrix::from_vec(2, 3, vec![0.3, 0.9, 1.0, 0.0, 0.5, 0.7]).unwrap();
        let xb = Crossbar::from_weights(&w, DeviceModel::default()).unwrap();
        xb.save(&path, Some(serde_json::json!({"note": 1}))).unwrap();
        let (back, ext) = Crossbar::load(&path).unwrap();
        assert_eq!(back, xb);
        assert_eq!(ext.unwrap()["note"], 1);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn snapshot_rejects_wrong_format() {
        let f = CrossbarFile {
            format: "other".into(),
            version: 1,
            rows: 1,
            cols: 1,
            device: DeviceModel::default(),
            conductance: vec![1e-5],
            extension: None,
        };
        assert!(f.into_crossbar().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn weight_roundtrip_above_floor(ws in proptest::collection::vec(0.0f64..=1.0, 12)) {
                let d = DeviceModel::default();
                let w = Matrix::from_vec(3, 4, ws.clone()).unwrap();
                let xb = Crossbar::from_weights(&w, d).unwrap();
                for i in 0..3 {
                    for j in 0..4 {
                        let back = xb.weight_of(i, j).unwrap();
                        let expect = ws[i * 4 + j].max(d.weight_floor());
                        prop_assert!((back - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
