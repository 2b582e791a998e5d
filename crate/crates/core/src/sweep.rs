//! One-axis sensitivity sweeps over quantile, gamma and eps, and the named
//! hyperparameter presets.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigFile, RunConfig};
use crate::error::{Error, Result};
use crate::pipeline::{run_with_fingerprints, Inputs};
use crate::vote::{DisciplineAggregation, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Quantile,
    Gamma,
    Eps,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Quantile => "quantile",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Eps => "eps",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig, value: f64) {
        match self {
            SweepAxis::Quantile => cfg.quantile_q = value,
            SweepAxis::Gamma => cfg.gamma = value,
            SweepAxis::Eps => cfg.dbscan_eps = value,
        }
    }

    /// Grid covering the usual range of each axis; eps is log-spaced.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Quantile => (1..=10).map(|i| i as f64 * 0.05).collect(),
            SweepAxis::Gamma => (1..=10).map(f64::from).collect(),
            SweepAxis::Eps => vec![1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1],
        }
    }

    pub fn log_scale(self) -> bool {
        self == SweepAxis::Eps
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" | "q" => Ok(SweepAxis::Quantile),
            "gamma" => Ok(SweepAxis::Gamma),
            "eps" | "epsilon" => Ok(SweepAxis::Eps),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (expected quantile, gamma or eps)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub fixed: RunConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("sweep values must be strictly increasing".into()));
        }
        for &v in &self.values {
            let mut cfg = self.fixed.clone();
            self.axis.apply(&mut cfg, v);
            cfg.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub overall_accuracy: f64,
    pub discipline_accuracy_mean: f64,
    pub mean_members: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

/// Runs the pipeline once per value with the axis field overridden.
pub fn run_sweep(spec: &SweepSpec, inputs: &Inputs, aggregation: DisciplineAggregation) -> Result<SweepTable> {
    spec.validate()?;
    let fingerprints = inputs.fingerprints(spec.fixed.fingerprint_strategy)?;
    let rows = spec
        .values
        .par_iter()
        .map(|&value| {
            let mut cfg = spec.fixed.clone();
            spec.axis.apply(&mut cfg, value);
            let out = run_with_fingerprints(inputs, &fingerprints, &cfg, aggregation)?;
            let dfpe = out.report.method(Method::Dfpe);
            Ok(SweepRow {
                value,
                overall_accuracy: dfpe.overall_accuracy,
                discipline_accuracy_mean: dfpe.discipline_accuracy_mean,
                mean_members: out.report.participation.mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        axis: spec.axis,
        rows,
    })
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},overall_accuracy,discipline_accuracy_mean,mean_members\n",
            self.axis.name()
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.4}",
                r.value, r.overall_accuracy, r.discipline_accuracy_mean, r.mean_members
            )
            .unwrap();
        }
        out
    }

    /// Accuracy-vs-value line chart as a standalone SVG document.
    pub fn to_svg(&self) -> String {
        const W: f64 = 560.0;
        const H: f64 = 360.0;
        const L: f64 = 70.0;
        const R: f64 = 20.0;
        const T: f64 = 30.0;
        const B: f64 = 50.0;
        let log = self.axis.log_scale();
        let xform = |v: f64| if log { v.log10() } else { v };
        let xs: Vec<f64> = self.rows.iter().map(|r| xform(r.value)).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| r.overall_accuracy).collect();
        let span = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&xs);
        let (mut y0, mut y1) = span(&ys);
        let pad = (y1 - y0) * 0.1;
        y0 -= pad;
        y1 += pad;
        let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
        let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

        let mut s = String::new();
        writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
        )
        .unwrap();
        writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">Accuracy vs. {}{}</text>",
            W / 2.0,
            self.axis.name(),
            if log { " (log scale)" } else { "" }
        )
        .unwrap();
        writeln!(
            s,
            "<line x1=\"{L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
            H - B,
            W - R,
            H - B
        )
        .unwrap();
        writeln!(s, "<line x1=\"{L}\" y1=\"{T}\" x2=\"{L}\" y2=\"{}\" stroke=\"black\"/>", H - B).unwrap();
        for r in &self.rows {
            let x = px(xform(r.value));
            writeln!(
                s,
                "<text x=\"{x:.1}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
                H - B + 16.0,
                r.value
            )
            .unwrap();
        }
        for k in 0..=4 {
            let y = y0 + (y1 - y0) * k as f64 / 4.0;
            writeln!(
                s,
                "<text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{y:.3}</text>",
                L - 6.0,
                py(y) + 3.0
            )
            .unwrap();
        }
        let points: Vec<String> = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        )
        .unwrap();
        for p in &points {
            let (x, y) = p.split_once(',').unwrap();
            writeln!(s, "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"steelblue\"/>").unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Named hyperparameter settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// q = 0.05, gamma = 5, eps = 1e-4.
    Optimal,
    /// q = 0.5, gamma = 7, eps = 1e-3: fewer members per subject.
    Balanced,
    /// User-defined in the `[efficient]` table of a config file.
    Efficient,
}

pub const PRESET_NAMES: [&str; 3] = ["optimal", "balanced", "efficient"];

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(Preset::Optimal),
            "balanced" => Ok(Preset::Balanced),
            "efficient" => Ok(Preset::Efficient),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; valid presets: {}",
                PRESET_NAMES.join(", ")
            ))),
        }
    }
}

/// Built-in preset applied on top of the defaults.
pub fn preset(name: &str) -> Result<RunConfig> {
    preset_with(name.parse()?, RunConfig::default(), None)
}

/// Applies a preset's fields to `base`. The efficient preset is read from
/// `file` and is an error when the file does not define it.
pub fn preset_with(p: Preset, mut base: RunConfig, file: Option<&ConfigFile>) -> Result<RunConfig> {
    match p {
        Preset::Optimal => {
            base.quantile_q = 0.05;
            base.gamma = 5.0;
            base.dbscan_eps = 1e-4;
        }
        Preset::Balanced => {
            base.quantile_q = 0.5;
            base.gamma = 7.0;
            base.dbscan_eps = 1e-3;
        }
        Preset::Efficient => {
            let patch = file.and_then(|f| f.efficient.as_ref()).ok_or_else(|| {
                Error::Config(
                    "preset \"efficient\" has no built-in values; define an [efficient] table in the config file".into(),
                )
            })?;
            patch.apply(&mut base);
        }
    }
    Ok(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let o = preset("optimal").unwrap();
        assert_eq!((o.quantile_q, o.gamma, o.dbscan_eps), (0.05, 5.0, 1e-4));
        let b = preset("balanced").unwrap();
        assert_eq!((b.quantile_q, b.gamma, b.dbscan_eps), (0.5, 7.0, 1e-3));
        let e = preset("fastest").unwrap_err().to_string();
        assert!(e.contains("optimal") && e.contains("balanced"), "{e}");
        assert!(preset("efficient").is_err());
        let file = ConfigFile::parse("[efficient]\nquantile_q = 0.2\ndbscan_eps = 0.002\n").unwrap();
        let eff = preset_with(Preset::Efficient, RunConfig::default(), Some(&file)).unwrap();
        assert_eq!((eff.quantile_q, eff.dbscan_eps, eff.gamma), (0.2, 0.002, 5.0));
    }

    #[test]
    fn spec_validation() {
        let mut spec = SweepSpec {
            axis: SweepAxis::Eps,
            values: vec![1e-4, 1e-3],
            fixed: RunConfig::default(),
        };
        spec.validate().unwrap();
        spec.values = vec![1e-3, 1e-4];
        assert!(spec.validate().is_err());
        spec.values = vec![];
        assert!(spec.validate().is_err());
        spec.values = vec![0.0, 1.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let t = SweepTable {
            axis: SweepAxis::Eps,
            rows: vec![
                SweepRow { value: 1e-4, overall_accuracy: 0.7, discipline_accuracy_mean: 0.7, mean_members: 9.0 },
                SweepRow { value: 1e-2, overall_accuracy: 0.68, discipline_accuracy_mean: 0.69, mean_members: 2.0 },
            ],
        };
        let svg = t.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("log scale"));
        assert_eq!(t.to_csv().lines().count(), 3);
    }
}
