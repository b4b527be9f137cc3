//! Dataset resolution: file loading and the synthetic-spec parser.

use gdr_core::{load_matrix, make_blobs, make_swiss_roll, DataMatrix, GdrError, MatrixFormat};

use crate::args::{FormatArg, InputArgs};

/// A resolved dataset plus the swiss-roll parameter when applicable.
pub struct ResolvedData {
    pub data: DataMatrix,
    pub roll_t: Option<Vec<f64>>,
    pub name: String,
}

pub fn resolve(args: &InputArgs, seed: u64) -> Result<ResolvedData, GdrError> {
    match (&args.input, &args.synthetic) {
        (Some(path), None) => {
            let format = match args.format {
                FormatArg::Csv => MatrixFormat::Csv {
                    has_header: args.csv_header,
                    label_column: args.csv_labels,
                },
                FormatArg::Bin => MatrixFormat::F32Binary,
            };
            let data = load_matrix(path, format)?;
            Ok(ResolvedData {
                data,
                roll_t: None,
                name: path.display().to_string(),
            })
        }
        (None, Some(spec)) => parse_synthetic(spec, seed),
        (None, None) => Err(GdrError::Config(
            "provide --input or --synthetic".into(),
        )),
        (Some(_), Some(_)) => Err(GdrError::Config(
            "--input and --synthetic conflict".into(),
        )),
    }
}

/// Grammar: name:key=value,key=value. Names: swiss_roll (n, noise,
/// seed), blobs (n, clusters, dim, sep, seed).
pub fn parse_synthetic(spec: &str, default_seed: u64) -> Result<ResolvedData, GdrError> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut params = std::collections::HashMap::new();
    if !rest.is_empty() {
        for pair in rest.split(',') {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                GdrError::Config(format!("bad synthetic parameter '{pair}' (want key=value)"))
            })?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get_f64 = |key: &str, default: f64| -> Result<f64, GdrError> {
        params
            .get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| GdrError::Config(format!("cannot parse {key}={v}")))
            })
            .unwrap_or(Ok(default))
    };
    let get_usize = |key: &str, default: usize| -> Result<usize, GdrError> {
        params
            .get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| GdrError::Config(format!("cannot parse {key}={v}")))
            })
            .unwrap_or(Ok(default))
    };
    let seed = get_usize("seed", default_seed as usize)? as u64;

    match name {
        "swiss_roll" => {
            let n = get_usize("n", 5000)?;
            let noise = get_f64("noise", 0.0)?;
            let (data, t) = make_swiss_roll(n, noise, seed)?;
            Ok(ResolvedData {
                data,
                roll_t: Some(t),
                name: format!("swiss_roll(n={n},noise={noise},seed={seed})"),
            })
        }
        "blobs" => {
            let n = get_usize("n", 1000)?;
            let clusters = get_usize("clusters", 5)?;
            let dim = get_usize("dim", 10)?;
            let sep = get_f64("sep", 10.0)?;
            let data = make_blobs(n, clusters, dim, sep, seed)?;
            Ok(ResolvedData {
                data,
                roll_t: None,
                name: format!("blobs(n={n},clusters={clusters},dim={dim},sep={sep},seed={seed})"),
            })
        }
        other => Err(GdrError::Config(format!(
            "unknown synthetic dataset '{other}' (want swiss_roll or blobs)"
        ))),
    }
}
