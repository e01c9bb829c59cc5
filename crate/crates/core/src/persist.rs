//! Versioned plain-text files for calibrated models.
//!
//! A file starts with `hivpop <kind> <version>` followed by `key = values`
//! lines. Floats are written with 17 significant digits, so a save/load
//! cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::e0model::{CountryE0, DoubleLogisticParams, E0Model, ParameterDraw, VarianceModel};
use crate::hivmlt::{Guardrails, MltBasis, WeightRegression, COMPONENTS, DESIGN_TERMS, MLT_ROWS};
use crate::pipeline::Models;

pub const FORMAT_VERSION: u32 = 1;
pub const E0_MODEL_FILE: &str = "e0_model.txt";
pub const MLT_BASIS_FILE: &str = "mlt_basis.txt";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("expected a '{expected}' file, found '{found}'")]
    Kind { expected: String, found: String },
    #[error("unsupported format version {found} (this build reads {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        source: Box<PersistError>,
    },
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(" ")
}

fn header(kind: &str) -> String {
    format!("hivpop {kind} {FORMAT_VERSION}\n")
}

struct Line<'a> {
    number: usize,
    key: &'a str,
    value: &'a str,
}

impl Line<'_> {
    fn err(&self, reason: impl Into<String>) -> PersistError {
        PersistError::Format {
            line: self.number,
            reason: reason.into(),
        }
    }

    fn floats(&self) -> Result<Vec<f64>, PersistError> {
        self.value
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| self.err(format!("'{t}' is not a number"))))
            .collect()
    }

    fn exact<const N: usize>(&self) -> Result<[f64; N], PersistError> {
        let v = self.floats()?;
        v.as_slice()
            .try_into()
            .map_err(|_| self.err(format!("{} expects {N} values, found {}", self.key, v.len())))
    }
}

fn parse<'a>(text: &'a str, kind: &str) -> Result<Vec<Line<'a>>, PersistError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(PersistError::Format {
        line: 1,
        reason: "empty file".into(),
    })?;
    let parts: Vec<&str> = first.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "hivpop" {
        return Err(PersistError::Format {
            line: 1,
            reason: "missing 'hivpop <kind> <version>' header".into(),
        });
    }
    if parts[1] != kind {
        return Err(PersistError::Kind {
            expected: kind.into(),
            found: parts[1].into(),
        });
    }
    let version: u32 = parts[2].parse().map_err(|_| PersistError::Format {
        line: 1,
        reason: format!("bad version '{}'", parts[2]),
    })?;
    if version != FORMAT_VERSION {
        return Err(PersistError::Version { found: version });
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let (key, value) = l.split_once('=').ok_or(PersistError::Format {
                line: i + 1,
                reason: "expected 'key = values'".into(),
            })?;
            Ok(Line {
                number: i + 1,
                key: key.trim(),
                value: value.trim(),
            })
        })
        .collect()
}

pub fn e0_model_to_string(model: &E0Model) -> String {
    let mut s = header("e0model");
    let v = &model.variance;
    let _ = writeln!(s, "beta_hna = {}", fmt_f64(model.beta_hna));
    let _ = writeln!(s, "variance_knots = {}", join(v.knots.iter().copied()));
    let _ = writeln!(s, "variance_sd = {}", join(v.sd.iter().copied()));
    let _ = writeln!(s, "epidemic_factor = {}", fmt_f64(v.epidemic_factor));
    for c in &model.countries {
        let _ = writeln!(s, "country = {} {} {}", c.code, u8::from(c.epidemic), join(c.theta.to_array()));
    }
    for d in &model.draws {
        let mut values = vec![d.beta_hna, d.variance.epidemic_factor];
        values.extend(&d.variance.sd);
        values.extend(d.theta.iter().flat_map(|t| t.to_array()));
        let _ = writeln!(s, "draw = {}", join(values));
    }
    s
}

pub fn e0_model_from_str(text: &str) -> Result<E0Model, PersistError> {
    let lines = parse(text, "e0model")?;
    let mut beta = None;
    let mut knots = None;
    let mut sd = None;
    let mut factor = None;
    let mut countries = Vec::new();
    let mut draw_lines = Vec::new();
    for line in &lines {
        match line.key {
            "beta_hna" => beta = Some(line.exact::<1>()?[0]),
            "variance_knots" => knots = Some(line.floats()?),
            "variance_sd" => sd = Some(line.floats()?),
            "epidemic_factor" => factor = Some(line.exact::<1>()?[0]),
            "country" => {
                let mut parts = line.value.splitn(3, char::is_whitespace);
                let code = parts.next().filter(|c| !c.is_empty()).ok_or_else(|| line.err("missing code"))?;
                let epidemic = match parts.next() {
                    Some("0") => false,
                    Some("1") => true,
                    _ => return Err(line.err("epidemic flag must be 0 or 1")),
                };
                let rest = Line {
                    number: line.number,
                    key: "country parameters",
                    value: parts.next().unwrap_or(""),
                };
                countries.push(CountryE0 {
                    code: code.to_string(),
                    theta: DoubleLogisticParams::from_array(rest.exact::<6>()?),
                    epidemic,
                });
            }
            "draw" => draw_lines.push(line),
            other => return Err(line.err(format!("unknown key '{other}'"))),
        }
    }
    let missing = |k: &str| PersistError::Format {
        line: 0,
        reason: format!("missing key '{k}'"),
    };
    let knots = knots.ok_or_else(|| missing("variance_knots"))?;
    let variance = VarianceModel::new(
        knots.clone(),
        sd.ok_or_else(|| missing("variance_sd"))?,
        factor.ok_or_else(|| missing("epidemic_factor"))?,
    )
    .map_err(|e| PersistError::Format {
        line: 0,
        reason: e.to_string(),
    })?;
    let nk = knots.len();
    let nc = countries.len();
    let draws = draw_lines
        .into_iter()
        .map(|line| {
            let v = line.floats()?;
            if v.len() != 2 + nk + 6 * nc {
                return Err(line.err(format!("draw needs {} values, found {}", 2 + nk + 6 * nc, v.len())));
            }
            let variance = VarianceModel::new(knots.clone(), v[2..2 + nk].to_vec(), v[1])
                .map_err(|e| line.err(e.to_string()))?;
            let theta = v[2 + nk..]
                .chunks_exact(6)
                .map(|c| DoubleLogisticParams::from_array(c.try_into().expect("chunk of 6")))
                .collect();
            Ok(ParameterDraw {
                beta_hna: v[0],
                variance,
                theta,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(E0Model {
        countries,
        beta_hna: beta.ok_or_else(|| missing("beta_hna"))?,
        variance,
        draws,
    })
}

pub fn mlt_basis_to_string(basis: &MltBasis) -> String {
    let mut s = header("mltbasis");
    let r = &basis.regression;
    let g = &basis.guardrails;
    let _ = writeln!(s, "mean = {}", join(basis.mean));
    for (i, c) in basis.components.iter().enumerate() {
        let _ = writeln!(s, "component_{i} = {}", join(*c));
    }
    for (i, c) in r.coefficients.iter().enumerate() {
        let _ = writeln!(s, "coefficients_{i} = {}", join(*c));
    }
    let _ = writeln!(s, "e0_standardization = {}", join([r.e0_center, r.e0_scale]));
    let _ = writeln!(s, "prevalence_standardization = {}", join([r.prevalence_center, r.prevalence_scale]));
    let _ = writeln!(s, "residual_sd = {}", join(basis.residual_sd));
    let _ = writeln!(s, "guardrails = {}", join([g.e0.0, g.e0.1, g.prevalence.0, g.prevalence.1]));
    s
}

pub fn mlt_basis_from_str(text: &str) -> Result<MltBasis, PersistError> {
    let lines = parse(text, "mltbasis")?;
    let mut mean = None;
    let mut components: [Option<[f64; MLT_ROWS]>; COMPONENTS] = [None; COMPONENTS];
    let mut coefficients: [Option<[f64; DESIGN_TERMS]>; COMPONENTS] = [None; COMPONENTS];
    let mut e0_std = None;
    let mut prev_std = None;
    let mut residual_sd = None;
    let mut guardrails = None;
    for line in &lines {
        let indexed = |prefix: &str| {
            line.key
                .strip_prefix(prefix)
                .and_then(|i| i.parse::<usize>().ok())
                .filter(|&i| i < COMPONENTS)
        };
        match line.key {
            "mean" => mean = Some(line.exact::<MLT_ROWS>()?),
            "e0_standardization" => e0_std = Some(line.exact::<2>()?),
            "prevalence_standardization" => prev_std = Some(line.exact::<2>()?),
            "residual_sd" => residual_sd = Some(line.exact::<MLT_ROWS>()?),
            "guardrails" => guardrails = Some(line.exact::<4>()?),
            _ => {
                if let Some(i) = indexed("component_") {
                    components[i] = Some(line.exact::<MLT_ROWS>()?);
                } else if let Some(i) = indexed("coefficients_") {
                    coefficients[i] = Some(line.exact::<DESIGN_TERMS>()?);
                } else {
                    return Err(line.err(format!("unknown key '{}'", line.key)));
                }
            }
        }
    }
    let missing = |k: String| PersistError::Format {
        line: 0,
        reason: format!("missing key '{k}'"),
    };
    let mut comps = [[0.0; MLT_ROWS]; COMPONENTS];
    let mut coefs = [[0.0; DESIGN_TERMS]; COMPONENTS];
    for i in 0..COMPONENTS {
        comps[i] = components[i].ok_or_else(|| missing(format!("component_{i}")))?;
        coefs[i] = coefficients[i].ok_or_else(|| missing(format!("coefficients_{i}")))?;
    }
    let e0_std = e0_std.ok_or_else(|| missing("e0_standardization".into()))?;
    let prev_std = prev_std.ok_or_else(|| missing("prevalence_standardization".into()))?;
    let g = guardrails.ok_or_else(|| missing("guardrails".into()))?;
    Ok(MltBasis {
        mean: mean.ok_or_else(|| missing("mean".into()))?,
        components: comps,
        regression: WeightRegression {
            coefficients: coefs,
            e0_center: e0_std[0],
            e0_scale: e0_std[1],
            prevalence_center: prev_std[0],
            prevalence_scale: prev_std[1],
        },
        residual_sd: residual_sd.ok_or_else(|| missing("residual_sd".into()))?,
        guardrails: Guardrails {
            e0: (g[0], g[1]),
            prevalence: (g[2], g[3]),
        },
    })
}

fn write(path: &Path, text: &str) -> Result<(), PersistError> {
    fs::write(path, text).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_with<T>(path: &Path, f: impl FnOnce(&str) -> Result<T, PersistError>) -> Result<T, PersistError> {
    let text = fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f(&text).map_err(|e| PersistError::InFile {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

pub fn save_e0_model(model: &E0Model, path: &Path) -> Result<(), PersistError> {
    write(path, &e0_model_to_string(model))
}

pub fn load_e0_model(path: &Path) -> Result<E0Model, PersistError> {
    read_with(path, e0_model_from_str)
}

pub fn save_mlt_basis(basis: &MltBasis, path: &Path) -> Result<(), PersistError> {
    write(path, &mlt_basis_to_string(basis))
}

pub fn load_mlt_basis(path: &Path) -> Result<MltBasis, PersistError> {
    read_with(path, mlt_basis_from_str)
}

/// Writes both model files into `dir`.
pub fn save_models(models: &Models, dir: &Path) -> Result<(), PersistError> {
    fs::create_dir_all(dir).map_err(|source| PersistError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    save_e0_model(&models.e0, &dir.join(E0_MODEL_FILE))?;
    save_mlt_basis(&models.mlt, &dir.join(MLT_BASIS_FILE))
}

pub fn load_models(dir: &Path) -> Result<Models, PersistError> {
    Ok(Models {
        e0: load_e0_model(&dir.join(E0_MODEL_FILE))?,
        mlt: load_mlt_basis(&dir.join(MLT_BASIS_FILE))?,
    })
}
