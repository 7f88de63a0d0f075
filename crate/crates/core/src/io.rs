//! Run configuration, number formatting for reports, and field exporters.

use crate::error::{Error, Result};
use crate::grid::{Grid3, PeriodicField, BOX_LENGTH};
use crate::jets::{JetParams, ResolutionPolicy};
use crate::params::{desk_preset, parse_rational, rational_text, to_f64, ParamLedger, Q, LEDGER_KEYS};
use ini::Ini;
use std::collections::BTreeMap;
use std::fmt::Debug;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Fixed 17-significant-digit formatting used by every report.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct JetSection {
    pub lambda_sigma: u64,
    pub sigma: Q,
    pub r: Q,
    pub mu: Q,
    pub shape: String,
    pub shape_options: BTreeMap<String, String>,
    pub seed: u64,
    pub resolution_policy: ResolutionPolicy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSection {
    pub n_per_axis: usize,
    pub n_t: usize,
    pub store: String,
    /// Mollification scale; the ledger value is far below any desk grid.
    pub ell: Q,
    pub mollifier_order: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergySection {
    pub selector: String,
    pub options: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub ledger: ParamLedger,
    pub jets: JetSection,
    pub grid: GridSection,
    pub energy: EnergySection,
    pub output: OutputSection,
}

fn rat(section: &str, key: &str, v: &str) -> Result<Q> {
    parse_rational(v).ok_or_else(|| Error::Config(format!("[{section}] {key}: '{v}' is not a number")))
}

fn int<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: '{v}' is not an integer")))
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let p = desk_preset(name)?;
        let r = |x: f64| crate::params::rational_from_f64(x, 12);
        Ok(Self {
            ledger: p.ledger,
            jets: JetSection {
                lambda_sigma: p.jet.lambda_sigma().round() as u64,
                sigma: r(p.jet.sigma),
                r: r(p.jet.r),
                mu: r(p.jet.mu),
                shape: "poly_bump".into(),
                shape_options: BTreeMap::new(),
                seed: 1,
                resolution_policy: ResolutionPolicy::Report,
            },
            grid: GridSection {
                n_per_axis: p.grid.n(),
                n_t: p.n_t,
                store: "auto".into(),
                ell: Q::new(1.into(), 4.into()),
                mollifier_order: 4,
            },
            energy: EnergySection {
                selector: "one_minus_cos_k".into(),
                options: [("k".to_string(), "1".to_string())].into_iter().collect(),
            },
            output: OutputSection {
                directory: "out".into(),
                formats: vec!["pf1".into()],
            },
        })
    }

    pub fn jet_params(&self) -> Result<JetParams> {
        JetParams::from_lambda_sigma(
            self.jets.lambda_sigma,
            to_f64(&self.jets.sigma),
            to_f64(&self.jets.r),
            to_f64(&self.jets.mu),
            to_f64(&self.ledger.q),
        )
    }

    pub fn grid3(&self) -> Result<Grid3> {
        Grid3::new(self.grid.n_per_axis).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse INI text. Sections are optional; missing values come from the tiny preset.
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("config syntax: {e}")))?;
        let mut c = Self::preset("tiny")?;
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    return Err(Error::Config("keys outside any section".into()));
                }
                continue;
            };
            match section {
                "ledger" => {
                    let pairs: BTreeMap<String, String> =
                        props.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
                    let mut merged: BTreeMap<String, String> = c.ledger.to_pairs().into_iter().collect();
                    merged.extend(pairs);
                    c.ledger = ParamLedger::from_pairs(&merged)?;
                }
                "jets" => {
                    for (k, v) in props.iter() {
                        match k {
                            "lambda_sigma" => c.jets.lambda_sigma = int(section, k, v)?,
                            "sigma" => c.jets.sigma = rat(section, k, v)?,
                            "r" => c.jets.r = rat(section, k, v)?,
                            "mu" => c.jets.mu = rat(section, k, v)?,
                            "shape" => c.jets.shape = v.trim().to_string(),
                            "seed" => c.jets.seed = int(section, k, v)?,
                            "resolution_policy" => c.jets.resolution_policy = ResolutionPolicy::parse(v.trim())?,
                            _ => match k.strip_prefix("shape.") {
                                Some(o) => {
                                    c.jets.shape_options.insert(o.to_string(), v.trim().to_string());
                                }
                                None => return Err(Error::Config(format!("unknown key [jets] {k}"))),
                            },
                        }
                    }
                }
                "grid" => {
                    for (k, v) in props.iter() {
                        match k {
                            "n_per_axis" => c.grid.n_per_axis = int(section, k, v)?,
                            "n_t" => c.grid.n_t = int(section, k, v)?,
                            "store" => c.grid.store = v.trim().to_string(),
                            "ell" => c.grid.ell = rat(section, k, v)?,
                            "mollifier_order" => c.grid.mollifier_order = int(section, k, v)?,
                            _ => return Err(Error::Config(format!("unknown key [grid] {k}"))),
                        }
                    }
                }
                "energy" => {
                    c.energy.options.clear();
                    for (k, v) in props.iter() {
                        match k {
                            "selector" => c.energy.selector = v.trim().to_string(),
                            _ => {
                                c.energy.options.insert(k.to_string(), v.trim().to_string());
                            }
                        }
                    }
                }
                "output" => {
                    for (k, v) in props.iter() {
                        match k {
                            "directory" => c.output.directory = v.trim().to_string(),
                            "formats" => {
                                c.output.formats = v
                                    .split(',')
                                    .map(|s| s.trim().to_string())
                                    .filter(|s| !s.is_empty())
                                    .collect()
                            }
                            _ => return Err(Error::Config(format!("unknown key [output] {k}"))),
                        }
                    }
                }
                other => return Err(Error::Config(format!("unknown section [{other}]"))),
            }
        }
        c.grid3()?;
        if c.grid.n_t < 5 {
            return Err(Error::Config("[grid] n_t must be at least 5".into()));
        }
        for f in &c.output.formats {
            if !exporter_names().contains(&f.as_str()) {
                return Err(Error::Config(format!(
                    "unknown output format '{f}' (available: {})",
                    exporter_names().join(", ")
                )));
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn serialize(&self) -> String {
        let mut s = String::from("[ledger]\n");
        let pairs = self.ledger.to_pairs();
        for key in LEDGER_KEYS {
            let v = &pairs.iter().find(|p| p.0 == key).expect("ledger key").1;
            s += &format!("{key} = {v}\n");
        }
        s += "\n[jets]\n";
        s += &format!("lambda_sigma = {}\n", self.jets.lambda_sigma);
        s += &format!("sigma = {}\n", rational_text(&self.jets.sigma));
        s += &format!("r = {}\n", rational_text(&self.jets.r));
        s += &format!("mu = {}\n", rational_text(&self.jets.mu));
        s += &format!("shape = {}\n", self.jets.shape);
        for (k, v) in &self.jets.shape_options {
            s += &format!("shape.{k} = {v}\n");
        }
        s += &format!("seed = {}\n", self.jets.seed);
        s += &format!("resolution_policy = {}\n", self.jets.resolution_policy.name());
        s += "\n[grid]\n";
        s += &format!("n_per_axis = {}\n", self.grid.n_per_axis);
        s += &format!("n_t = {}\n", self.grid.n_t);
        s += &format!("store = {}\n", self.grid.store);
        s += &format!("ell = {}\n", rational_text(&self.grid.ell));
        s += &format!("mollifier_order = {}\n", self.grid.mollifier_order);
        s += "\n[energy]\n";
        s += &format!("selector = {}\n", self.energy.selector);
        for (k, v) in &self.energy.options {
            s += &format!("{k} = {v}\n");
        }
        s += "\n[output]\n";
        s += &format!("directory = {}\n", self.output.directory);
        s += &format!("formats = {}\n", self.output.formats.join(","));
        s
    }
}

/// Field writer selected by name.
pub trait Exporter: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn extension(&self) -> &'static str;
    fn write(&self, f: &PeriodicField, w: &mut dyn Write) -> Result<()>;
}

#[derive(Debug)]
pub struct Pf1Exporter;

impl Exporter for Pf1Exporter {
    fn name(&self) -> &'static str {
        "pf1"
    }
    fn extension(&self) -> &'static str {
        "pf1"
    }
    fn write(&self, f: &PeriodicField, w: &mut dyn Write) -> Result<()> {
        f.write_pf1(w)
    }
}

/// Legacy VTK STRUCTURED_POINTS, ASCII, double precision.
#[derive(Debug)]
pub struct VtkLegacyExporter;

impl Exporter for VtkLegacyExporter {
    fn name(&self) -> &'static str {
        "vtk_legacy"
    }
    fn extension(&self) -> &'static str {
        "vtk"
    }
    fn write(&self, f: &PeriodicField, w: &mut dyn Write) -> Result<()> {
        let g = f.grid();
        let n = g.n();
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "jetforge field rank {:?}", f.rank())?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET STRUCTURED_POINTS")?;
        writeln!(w, "DIMENSIONS {n} {n} {n}")?;
        writeln!(w, "ORIGIN 0 0 0")?;
        writeln!(w, "SPACING {0} {0} {0}", fmt_f64(g.dx()))?;
        writeln!(w, "POINT_DATA {}", g.len())?;
        match f.ncomp() {
            1 => {
                writeln!(w, "SCALARS field double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for v in f.comp(0) {
                    writeln!(w, "{}", fmt_f64(*v))?;
                }
            }
            3 => {
                writeln!(w, "VECTORS field double")?;
                for i in 0..g.len() {
                    writeln!(w, "{} {} {}", fmt_f64(f.comp(0)[i]), fmt_f64(f.comp(1)[i]), fmt_f64(f.comp(2)[i]))?;
                }
            }
            nc => {
                writeln!(w, "FIELD components {nc}")?;
                for c in 0..nc {
                    writeln!(w, "c{c} 1 {} double", g.len())?;
                    for v in f.comp(c) {
                        writeln!(w, "{}", fmt_f64(*v))?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// One z-plane as CSV: i, j, x, y, then one column per component.
#[derive(Debug)]
pub struct CsvSliceExporter {
    pub k: usize,
}

impl Exporter for CsvSliceExporter {
    fn name(&self) -> &'static str {
        "csv_slice"
    }
    fn extension(&self) -> &'static str {
        "csv"
    }
    fn write(&self, f: &PeriodicField, w: &mut dyn Write) -> Result<()> {
        let g = f.grid();
        if self.k >= g.n() {
            return Err(Error::Invalid(format!("slice {} outside grid of {}", self.k, g.n())));
        }
        let mut out = csv::Writer::from_writer(w);
        let mut head = vec!["i".to_string(), "j".into(), "x".into(), "y".into()];
        head.extend((0..f.ncomp()).map(|c| format!("c{c}")));
        out.write_record(&head)?;
        for j in 0..g.n() {
            for i in 0..g.n() {
                let idx = g.index(i, j, self.k);
                let mut row = vec![i.to_string(), j.to_string(), fmt_f64(g.coord(i)), fmt_f64(g.coord(j))];
                row.extend((0..f.ncomp()).map(|c| fmt_f64(f.comp(c)[idx])));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub fn exporter_names() -> Vec<&'static str> {
    vec!["pf1", "vtk_legacy", "csv_slice"]
}

pub fn make_exporter(name: &str) -> Result<Box<dyn Exporter>> {
    match name {
        "pf1" => Ok(Box::new(Pf1Exporter)),
        "vtk_legacy" => Ok(Box::new(VtkLegacyExporter)),
        "csv_slice" => Ok(Box::new(CsvSliceExporter { k: 0 })),
        _ => Err(Error::Unknown {
            kind: "export format",
            name: name.into(),
            available: exporter_names().join(", "),
        }),
    }
}

pub fn export_field(path: &Path, f: &PeriodicField, exporter: &dyn Exporter) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    exporter.write(f, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Total box volume, used in report headers.
pub const TORUS_VOLUME: f64 = BOX_LENGTH * BOX_LENGTH * BOX_LENGTH;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rank;

    #[test]
    fn formatting_is_fixed() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(-2.5), "-2.5000000000000000e0");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn config_round_trip() {
        for name in crate::params::PRESET_NAMES {
            let mut c = RunConfig::preset(name).unwrap();
            c.jets.shape_options.insert("exponent".into(), "6".into());
            c.output.formats = vec!["pf1".into(), "vtk_legacy".into()];
            let text = c.serialize();
            let back = RunConfig::parse(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.serialize(), text);
        }
    }

    #[test]
    fn config_errors() {
        assert!(matches!(RunConfig::parse("[bogus]\nx = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[grid]\nn_per_axis = 7\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[ledger]\nq = abc\n"), Err(Error::Config(_))));
        let c = RunConfig::parse("[ledger]\nq = 2.01\nT = 2*pi\n").unwrap();
        assert_eq!(c.ledger.q, parse_rational("201/100").unwrap());
        assert!((c.ledger.t_end.value() - 2.0 * std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn csv_slice_first_row() {
        let g = Grid3::new(8).unwrap();
        let f = PeriodicField::scalar_from_fn(g, |x| x[0].sin());
        let mut buf = Vec::new();
        CsvSliceExporter { k: 0 }.write(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(row[0], "1");
        assert_eq!(row[4].parse::<f64>().unwrap(), g.coord(1).sin());
    }

    #[test]
    fn vtk_header() {
        let g = Grid3::new(8).unwrap();
        let f = PeriodicField::zeros(g, Rank::Vector);
        let mut buf = Vec::new();
        VtkLegacyExporter.write(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[3], "DATASET STRUCTURED_POINTS");
        assert_eq!(lines[4], "DIMENSIONS 8 8 8");
        assert_eq!(lines[7], "POINT_DATA 512");
        assert_eq!(lines.len(), 9 + 512);
    }
}
