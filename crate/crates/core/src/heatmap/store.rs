//! Text store for heatmap pairs and split manifests.
//!
//! ```text
//! playstyle-heatmaps 1
//! location 0 105 0 68
//! direction -12 12 -8 8
//! <record_id>\t<entity_id>\t<phase;phase;...>\t<1750 location counts>\t<1750 direction counts>
//! ```
//!
//! Counts are comma-separated, row-major. A manifest is one record id per line.

use std::io::{BufRead, BufReader, Read, Write};

use super::{Bounds, HeatmapError, HeatmapGrid, HeatmapPair};

const MAGIC: &str = "playstyle-heatmaps 1";

pub fn record_id(entity_id: &str, sources: &[String]) -> String {
    format!("{entity_id}@{}", sources.join("+"))
}

fn check_id(id: &str) -> Result<(), HeatmapError> {
    if id.is_empty() || id.contains(['\t', '\n', '\r', ';', '+', '@', ',']) {
        return Err(HeatmapError::Malformed(format!("identifier `{id}` is empty or has a reserved character")));
    }
    Ok(())
}

fn write_bounds<W: Write>(w: &mut W, name: &str, b: &Bounds) -> std::io::Result<()> {
    writeln!(w, "{name} {} {} {} {}", b.x_min, b.x_max, b.y_min, b.y_max)
}

fn parse_bounds(line: Option<std::io::Result<String>>, name: &str) -> Result<Bounds, HeatmapError> {
    let line = line.ok_or_else(|| HeatmapError::Malformed(format!("missing {name} bounds")))??;
    let mut it = line.split(' ');
    if it.next() != Some(name) {
        return Err(HeatmapError::Malformed(format!("expected {name} bounds, found `{line}`")));
    }
    let v: Vec<f64> = it
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| HeatmapError::Malformed(format!("{name} bounds: {e}")))?;
    match v[..] {
        [x_min, x_max, y_min, y_max] => Ok(Bounds { x_min, x_max, y_min, y_max }),
        _ => Err(HeatmapError::Malformed(format!("{name} bounds need 4 values"))),
    }
}

fn write_cells<W: Write>(w: &mut W, cells: &[u32]) -> std::io::Result<()> {
    for (i, c) in cells.iter().enumerate() {
        if i > 0 {
            w.write_all(b",")?;
        }
        write!(w, "{c}")?;
    }
    Ok(())
}

/// All pairs must share the first pair's bounds.
pub fn write_store<W: Write>(writer: W, pairs: &[HeatmapPair]) -> Result<(), HeatmapError> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "{MAGIC}")?;
    let (loc, dir) = match pairs.first() {
        Some(p) => (*p.location.bounds(), *p.direction.bounds()),
        None => (Bounds::pitch(Default::default()), Bounds::direction(12.0, 8.0)),
    };
    write_bounds(&mut w, "location", &loc)?;
    write_bounds(&mut w, "direction", &dir)?;
    for p in pairs {
        if *p.location.bounds() != loc || *p.direction.bounds() != dir {
            return Err(HeatmapError::BoundsMismatch);
        }
        check_id(&p.entity_id)?;
        for s in &p.sources {
            check_id(s)?;
        }
        write!(w, "{}\t{}\t{}\t", p.record_id(), p.entity_id, p.sources.join(";"))?;
        write_cells(&mut w, p.location.cells())?;
        w.write_all(b"\t")?;
        write_cells(&mut w, p.direction.cells())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cells(field: &str, line: usize) -> Result<Vec<u32>, HeatmapError> {
    field
        .split(',')
        .map(|s| s.parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|e| HeatmapError::Malformed(format!("line {line}: {e}")))
}

pub fn read_store<R: Read>(reader: R) -> Result<Vec<HeatmapPair>, HeatmapError> {
    let mut lines = BufReader::new(reader).lines();
    match lines.next() {
        Some(Ok(l)) if l == MAGIC => {}
        _ => return Err(HeatmapError::Malformed("missing store header".into())),
    }
    let loc = parse_bounds(lines.next(), "location")?;
    let dir = parse_bounds(lines.next(), "direction")?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 4;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(HeatmapError::Malformed(format!("line {lineno}: expected 5 fields, found {}", f.len())));
        }
        let sources: Vec<String> = f[2].split(';').map(str::to_string).collect();
        let pair = HeatmapPair {
            entity_id: f[1].to_string(),
            sources,
            location: HeatmapGrid::from_cells(loc, parse_cells(f[3], lineno)?)?,
            direction: HeatmapGrid::from_cells(dir, parse_cells(f[4], lineno)?)?,
        };
        if pair.record_id() != f[0] {
            return Err(HeatmapError::Malformed(format!("line {lineno}: record id does not match its fields")));
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(writer: W, ids: &[String]) -> Result<(), HeatmapError> {
    let mut w = std::io::BufWriter::new(writer);
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<String>, HeatmapError> {
    BufReader::new(reader)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.is_empty()))
        .collect::<Result<_, _>>()
        .map_err(HeatmapError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::{direction_heatmap, location_heatmap, HeatmapConfig};

    #[test]
    fn store_round_trip() {
        let cfg = HeatmapConfig::default();
        let pair = HeatmapPair {
            entity_id: "p3#1".into(),
            sources: vec!["m1-p00".into(), "m2-p03".into()],
            location: location_heatmap([[1.0, 2.0], [50.0, 60.0], [50.0, 60.0]], cfg.dims).0,
            direction: direction_heatmap([[5.0, 1.0], [-7.0, -7.0]], 4.0, cfg.direction_bounds()),
        };
        let mut buf = Vec::new();
        write_store(&mut buf, std::slice::from_ref(&pair)).unwrap();
        assert_eq!(read_store(&buf[..]).unwrap(), vec![pair.clone()]);

        let ids = vec![pair.record_id(), "x@y".to_string()];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &ids).unwrap();
        assert_eq!(read_manifest(&buf[..]).unwrap(), ids);
    }

    #[test]
    fn rejects_reserved_characters_and_garbage() {
        let cfg = HeatmapConfig::default();
        let pair = HeatmapPair {
            entity_id: "bad;id".into(),
            sources: vec!["m".into()],
            location: HeatmapGrid::zeros(cfg.location_bounds()),
            direction: HeatmapGrid::zeros(cfg.direction_bounds()),
        };
        assert!(write_store(Vec::new(), &[pair]).is_err());
        assert!(read_store("nope\n".as_bytes()).is_err());
        let bad = format!("{MAGIC}\nlocation 0 105 0 68\ndirection -12 12 -8 8\na@b\ta\tb\t1,2\t3\n");
        assert!(read_store(bad.as_bytes()).is_err());
    }
}
