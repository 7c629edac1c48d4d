//! Program, economics and price-series files.
//!
//! Programs file columns: `program,kind,theta,series`. `kind` is `contract`,
//! `market` or `price_driven`; `theta` is required for price-driven programs.
//! `series` names a CSV (relative to the programs file) with `revenue` and
//! `deployment` columns; price-driven programs may omit it and are then paid
//! the LMP.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{mining_revenue, price_driven_deployment, CurvePoint, DrProgram, ProgramKind};
use crate::data::schema_err;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ProgramSpec {
    pub name: String,
    pub kind: ProgramKind,
    pub series: Option<PathBuf>,
}

fn reader(path: &Path) -> Result<(csv::Reader<File>, Vec<String>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| schema_err(path, None, None, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    Ok((rdr, header))
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| schema_err(path, None, Some(name), "missing column"))
}

fn number(path: &Path, row: usize, col: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            schema_err(
                path,
                Some(row),
                Some(col),
                format!("not a finite number: `{raw}`"),
            )
        })
}

/// Reads one numeric column; rows are numbered from 1 after the header.
pub fn load_series(path: &Path, name: &str) -> Result<Vec<f64>> {
    let (mut rdr, header) = reader(path)?;
    let c = column(path, &header, name)?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| schema_err(path, Some(r + 1), None, e.to_string()))?;
        let raw = rec.get(c).unwrap_or("");
        out.push(number(path, r + 1, name, raw)?);
    }
    if out.is_empty() {
        return Err(schema_err(path, None, Some(name), "no data rows"));
    }
    Ok(out)
}

fn read_specs(path: &Path) -> Result<Vec<ProgramSpec>> {
    let (mut rdr, header) = reader(path)?;
    let (cp, ck) = (
        column(path, &header, "program")?,
        column(path, &header, "kind")?,
    );
    let ct = header.iter().position(|h| h == "theta");
    let cs = header.iter().position(|h| h == "series");
    let base = path.parent().unwrap_or(Path::new("."));
    let mut specs: Vec<ProgramSpec> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| schema_err(path, Some(row), None, e.to_string()))?;
        let get = |c: Option<usize>| c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty());
        let name = get(Some(cp))
            .ok_or_else(|| schema_err(path, Some(row), Some("program"), "empty program name"))?;
        if specs.iter().any(|s| s.name == name) {
            return Err(schema_err(
                path,
                Some(row),
                Some("program"),
                format!("duplicate program `{name}`"),
            ));
        }
        let kind = match get(Some(ck)) {
            Some("contract") => ProgramKind::Contract,
            Some("market") => ProgramKind::Market,
            Some("price_driven") => {
                let raw = get(ct).ok_or_else(|| {
                    schema_err(
                        path,
                        Some(row),
                        Some("theta"),
                        "price_driven needs a threshold",
                    )
                })?;
                ProgramKind::PriceDriven {
                    theta: number(path, row, "theta", raw)?,
                }
            }
            other => {
                return Err(schema_err(
                    path,
                    Some(row),
                    Some("kind"),
                    format!(
                        "unknown kind `{}` (contract, market, price_driven)",
                        other.unwrap_or("")
                    ),
                ))
            }
        };
        let series = get(cs).map(|s| base.join(s));
        if series.is_none() && !matches!(kind, ProgramKind::PriceDriven { .. }) {
            return Err(schema_err(
                path,
                Some(row),
                Some("series"),
                format!("{} program needs a series file", kind.as_str()),
            ));
        }
        specs.push(ProgramSpec {
            name: name.to_string(),
            kind,
            series,
        });
    }
    Ok(specs)
}

/// Loads every program against an LMP series of the planning horizon.
pub fn load_programs(path: &Path, lmp: &[f64]) -> Result<Vec<DrProgram>> {
    let t = lmp.len();
    read_specs(path)?
        .into_iter()
        .map(|s| {
            let (revenue, deployment) = match &s.series {
                Some(f) => {
                    let rev = load_series(f, "revenue")?;
                    if rev.len() != t {
                        return Err(schema_err(
                            f,
                            None,
                            Some("revenue"),
                            format!(
                                "expected {t} rows to match the LMP series, found {}",
                                rev.len()
                            ),
                        ));
                    }
                    let dep = match s.kind {
                        ProgramKind::PriceDriven { theta } => price_driven_deployment(lmp, theta),
                        _ => load_series(f, "deployment")?,
                    };
                    if let Some(i) = dep.iter().position(|d| !(0.0..=1.0).contains(d)) {
                        return Err(schema_err(
                            f,
                            Some(i + 1),
                            Some("deployment"),
                            format!("{} outside [0, 1]", dep[i]),
                        ));
                    }
                    (rev, dep)
                }
                None => {
                    let ProgramKind::PriceDriven { theta } = s.kind else {
                        unreachable!("checked in read_specs")
                    };
                    (lmp.to_vec(), price_driven_deployment(lmp, theta))
                }
            };
            DrProgram::new(s.name, revenue, deployment, s.kind)
        })
        .collect()
}

/// Mining economics: `btc_price` ($/BTC) and `efficiency` (MWh/BTC), either
/// one row applied to every hour or one row per hour. An optional
/// `energy_cost` column overrides the LMP as the electricity cost.
#[derive(Clone, Debug, PartialEq)]
pub struct EconomicsFile {
    pub btc_price: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub energy_cost: Option<Vec<f64>>,
}

pub fn load_economics(path: &Path) -> Result<EconomicsFile> {
    let (_, header) = reader(path)?;
    Ok(EconomicsFile {
        btc_price: load_series(path, "btc_price")?,
        efficiency: load_series(path, "efficiency")?,
        energy_cost: if header.iter().any(|h| h == "energy_cost") {
            Some(load_series(path, "energy_cost")?)
        } else {
            None
        },
    })
}

impl EconomicsFile {
    fn broadcast(v: &[f64], t: usize, what: &str) -> Result<Vec<f64>> {
        match v.len() {
            1 => Ok(vec![v[0]; t]),
            n if n == t => Ok(v.to_vec()),
            n => Err(Error::dim(
                "economics",
                format!("1 or {t} rows of {what}"),
                n.to_string(),
            )),
        }
    }

    /// Mining revenue `p_b(t)` in $/MWh over `t` hours.
    pub fn mining_revenue(&self, t: usize) -> Result<Vec<f64>> {
        let btc = Self::broadcast(&self.btc_price, t, "btc_price")?;
        let eff = Self::broadcast(&self.efficiency, t, "efficiency")?;
        btc.iter()
            .zip(&eff)
            .map(|(b, e)| mining_revenue(&[*b], *e).map(|v| v[0]))
            .collect()
    }

    /// Electricity cost over `t` hours, defaulting to `lmp`.
    pub fn energy_cost(&self, lmp: &[f64]) -> Result<Vec<f64>> {
        match &self.energy_cost {
            Some(c) => Self::broadcast(c, lmp.len(), "energy_cost"),
            None => Ok(lmp.to_vec()),
        }
    }
}

pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut s = String::from("theta,mean,lower,upper\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.theta, p.mean, p.lower, p.upper));
    }
    File::create(path)
        .and_then(|mut f| f.write_all(s.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
