//! Ensemble export: a flat little-endian binary table behind a short text
//! header, and CSV for small runs.
//!
//! Binary layout: the 8 magic bytes `DSMPENS1`, a `u32` header length, the
//! header as `key=value` lines, then states, increments and controls as
//! `f64` in path-major order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{BrownianIncrements, PathEnsemble, Scheme};
use crate::error::{Error, Result};
use crate::model::TimeGrid;

const MAGIC: &[u8; 8] = b"DSMPENS1";

fn header(ens: &PathEnsemble) -> String {
    format!(
        "paths={}\nsteps={}\nhorizon={:?}\ndim_state={}\ndim_noise={}\ndim_control={}\nseed={}\nscheme={}\n",
        ens.num_paths,
        ens.grid.num_steps(),
        ens.grid.horizon(),
        ens.dim_state,
        ens.dim_noise(),
        ens.dim_control,
        ens.seed,
        ens.scheme
    )
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_binary(ens: &PathEnsemble, w: &mut impl Write) -> Result<()> {
    let head = header(ens);
    w.write_all(MAGIC)?;
    w.write_all(&(head.len() as u32).to_le_bytes())?;
    w.write_all(head.as_bytes())?;
    write_f64s(w, &ens.states)?;
    write_f64s(w, ens.increments.data())?;
    write_f64s(w, &ens.controls)?;
    Ok(())
}

pub fn read_binary(r: &mut impl Read) -> Result<PathEnsemble> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Io("not an ensemble file (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut head = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut head)?;
    let head = String::from_utf8(head).map_err(|e| Error::Io(e.to_string()))?;
    let fields: BTreeMap<&str, &str> = head.lines().filter_map(|l| l.split_once('=')).collect();
    let get = |key: &str| -> Result<&str> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::Io(format!("ensemble header lacks `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::Io(format!("bad `{key}` in ensemble header")))
    };
    let paths = num("paths")?;
    let steps = num("steps")?;
    let n = num("dim_state")?;
    let d = num("dim_noise")?;
    let k = num("dim_control")?;
    let horizon: f64 = get("horizon")?
        .parse()
        .map_err(|_| Error::Io("bad `horizon` in ensemble header".into()))?;
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| Error::Io("bad `seed` in ensemble header".into()))?;
    let scheme: Scheme = get("scheme")?.parse()?;
    let grid = TimeGrid::new(horizon, steps)?;

    let states = read_f64s(r, paths * (steps + 1) * n)?;
    let increments = read_f64s(r, paths * steps * d)?;
    let controls = read_f64s(r, paths * steps * k)?;
    Ok(PathEnsemble {
        grid,
        num_paths: paths,
        dim_state: n,
        dim_control: k,
        states,
        increments: BrownianIncrements::from_raw(seed, paths, steps, d, grid.step(), increments)?,
        controls,
        seed,
        scheme,
    })
}

/// One row per `(path, node)` for the first `max_paths` paths. Increment and
/// control columns are empty at the terminal node.
pub fn write_csv(ens: &PathEnsemble, w: &mut impl Write, max_paths: usize) -> Result<()> {
    let n = ens.dim_state;
    let d = ens.dim_noise();
    let k = ens.dim_control;
    let mut cols = vec!["path".to_string(), "node".to_string(), "t".to_string()];
    cols.extend((0..n).map(|i| format!("x{i}")));
    cols.extend((0..d).map(|j| format!("dw{j}")));
    cols.extend((0..k).map(|l| format!("u{l}")));
    writeln!(w, "{}", cols.join(","))?;
    let steps = ens.grid.num_steps();
    for m in 0..ens.num_paths.min(max_paths) {
        for i in 0..=steps {
            let mut row = vec![m.to_string(), i.to_string(), format!("{:?}", ens.grid.node(i))];
            row.extend(ens.state_slice(m, i).iter().map(|v| format!("{v:?}")));
            if i < steps {
                row.extend(ens.increments.at(m, i).iter().map(|v| format!("{v:?}")));
                row.extend(ens.control(m, i).iter().map(|v| format!("{v:?}")));
            } else {
                row.extend(std::iter::repeat_n(String::new(), d + k));
            }
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}
