//! Model checkpoint format.
//!
//! Text header, then raw little-endian f64 parameter data:
//!
//! ```text
//! DIFFCH-MODEL v1
//! input_dim=.. patch_size=.. hidden_size=.. num_blocks=.. num_cond_tokens=..
//!   cond_mlp_depth=.. cond_embed_dim=.. num_scenarios=.. num_steps=..   (one line)
//! params=<n> values=<total>
//! <name> <d0>[x<d1>] <offset>        (n manifest lines)
//! DATA
//! <total * 8 bytes>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{ModelConfig, NoisePredictor};

const MAGIC: &str = "DIFFCH-MODEL v1";

pub fn save_checkpoint(model: &NoisePredictor, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{MAGIC}")?;
    let c = model.config();
    writeln!(
        w,
        "input_dim={} patch_size={} hidden_size={} num_blocks={} num_cond_tokens={} \
         cond_mlp_depth={} cond_embed_dim={} num_scenarios={} num_steps={}",
        c.input_dim,
        c.patch_size,
        c.hidden_size,
        c.num_blocks,
        c.num_cond_tokens,
        c.cond_mlp_depth,
        c.cond_embed_dim,
        c.num_scenarios,
        c.num_steps
    )?;
    writeln!(w, "params={} values={}", model.num_params(), model.total_values())?;
    let mut offset = 0usize;
    for i in 0..model.num_params() {
        let t = model.param_value(i);
        let shape = t
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        writeln!(w, "{} {shape} {offset}", model.param_names()[i])?;
        offset += t.numel();
    }
    writeln!(w, "DATA")?;
    for i in 0..model.num_params() {
        for v in model.param_value(i).data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NoisePredictor> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut line = String::new();

    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic: {:?}", line.trim_end())));
    }

    line.clear();
    r.read_line(&mut line)?;
    let config = parse_config_line(line.trim_end())?;

    line.clear();
    r.read_line(&mut line)?;
    let (num_params, total_values) = parse_counts_line(line.trim_end())?;

    let mut manifest = Vec::with_capacity(num_params);
    for _ in 0..num_params {
        line.clear();
        r.read_line(&mut line)?;
        let parts: Vec<&str> = line.trim_end().split(' ').collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!("bad manifest line {:?}", line.trim_end())));
        }
        let shape: Vec<usize> = parts[1]
            .split('x')
            .map(|d| d.parse().map_err(|_| Error::Format(format!("bad shape {:?}", parts[1]))))
            .collect::<Result<_>>()?;
        let offset: usize = parts[2]
            .parse()
            .map_err(|_| Error::Format(format!("bad offset {:?}", parts[2])))?;
        manifest.push((parts[0].to_string(), shape, offset));
    }

    line.clear();
    r.read_line(&mut line)?;
    if line.trim_end() != "DATA" {
        return Err(Error::Format("missing DATA marker".into()));
    }

    let mut bytes = vec![0u8; total_values * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated parameter data".into()))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after parameter data".into()));
    }

    // Rebuild the canonical layout from the config, then overwrite values.
    let mut model = NoisePredictor::init(config, 0)?;
    if model.num_params() != num_params || model.total_values() != total_values {
        return Err(Error::Format(format!(
            "manifest lists {num_params} params / {total_values} values; config implies {} / {}",
            model.num_params(),
            model.total_values()
        )));
    }
    let names = model.param_names();
    for (i, (name, shape, offset)) in manifest.iter().enumerate() {
        if *name != names[i] {
            return Err(Error::Format(format!(
                "manifest entry {i} is {name:?}, expected {:?}",
                names[i]
            )));
        }
        let expect = model.param_value(i);
        if expect.shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter {name}: shape {shape:?}, expected {:?}",
                expect.shape()
            )));
        }
        if offset + expect.numel() > total_values {
            return Err(Error::Format(format!("parameter {name}: offset past end of data")));
        }
        let value = model.param_value_mut(i);
        for (k, v) in value.data_mut().iter_mut().enumerate() {
            let at = (offset + k) * 8;
            let chunk: [u8; 8] = bytes[at..at + 8].try_into().expect("8-byte chunk");
            *v = f64::from_le_bytes(chunk);
        }
    }
    Ok(model)
}

fn parse_config_line(line: &str) -> Result<ModelConfig> {
    let mut fields = std::collections::HashMap::new();
    for part in line.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad config field {part:?}")))?;
        let v: usize = v
            .parse()
            .map_err(|_| Error::Format(format!("bad config value {part:?}")))?;
        fields.insert(k.to_string(), v);
    }
    let get = |k: &str| -> Result<usize> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("checkpoint config missing {k}")))
    };
    Ok(ModelConfig {
        input_dim: get("input_dim")?,
        patch_size: get("patch_size")?,
        hidden_size: get("hidden_size")?,
        num_blocks: get("num_blocks")?,
        num_cond_tokens: get("num_cond_tokens")?,
        cond_mlp_depth: get("cond_mlp_depth")?,
        cond_embed_dim: get("cond_embed_dim")?,
        num_scenarios: get("num_scenarios")?,
        num_steps: get("num_steps")?,
    })
}

fn parse_counts_line(line: &str) -> Result<(usize, usize)> {
    let mut params = None;
    let mut values = None;
    for part in line.split_whitespace() {
        match part.split_once('=') {
            Some(("params", v)) => params = v.parse().ok(),
            Some(("values", v)) => values = v.parse().ok(),
            _ => return Err(Error::Format(format!("bad counts field {part:?}"))),
        }
    }
    match (params, values) {
        (Some(p), Some(v)) => Ok((p, v)),
        _ => Err(Error::Format("counts line missing params= or values=".into())),
    }
}
