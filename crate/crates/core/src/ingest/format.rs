//! Delimited text formats for tracking, events and phase files.
//!
//! Tracking (`x`/`y` columns select pre-projected mode, `lat`/`lon` geo mode):
//!
//! ```text
//! match_id,player_id,team,t,x,y,speed
//! match_id,player_id,team,t,lat,lon,speed
//! ```
//!
//! Events: `match_id,event_type,t,team` with `event_type` one of
//! `half_start`, `half_end`, `substitution`, `dismissal`.
//!
//! Phase file: `phase_id,player_id,team,t,s_x,s_y,v_x,v_y,in_bounds`.

use std::io::{Read, Write};

use super::{EventKind, GeoPoint, IngestError, MatchEvent, PhaseInterval, PlayerTrack, RawPosition, RawSample, TrackedPhase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionMode {
    Pitch,
    Geo,
}

const PITCH_HEADER: [&str; 7] = ["match_id", "player_id", "team", "t", "x", "y", "speed"];
const GEO_HEADER: [&str; 7] = ["match_id", "player_id", "team", "t", "lat", "lon", "speed"];
const EVENTS_HEADER: [&str; 4] = ["match_id", "event_type", "t", "team"];
const PHASE_HEADER: [&str; 9] = ["phase_id", "player_id", "team", "t", "s_x", "s_y", "v_x", "v_y", "in_bounds"];

fn parse_f64(field: &[u8], line: u64, name: &str) -> Result<f64, IngestError> {
    std::str::from_utf8(field)
        .ok()
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| IngestError::Malformed(format!("line {line}: bad {name} `{}`", String::from_utf8_lossy(field))))
}

fn text(field: &[u8], line: u64) -> Result<String, IngestError> {
    std::str::from_utf8(field)
        .map(|s| s.to_string())
        .map_err(|_| IngestError::Malformed(format!("line {line}: invalid utf-8")))
}

fn check_header(found: &csv::ByteRecord, want: &[&str]) -> bool {
    found.len() == want.len() && found.iter().zip(want).all(|(a, b)| a == b.as_bytes())
}

pub fn read_tracking<R: Read>(reader: R) -> Result<(PositionMode, Vec<RawSample>), IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.byte_headers()?.clone();
    let mode = if check_header(&header, &PITCH_HEADER) {
        PositionMode::Pitch
    } else if check_header(&header, &GEO_HEADER) {
        PositionMode::Geo
    } else {
        return Err(IngestError::Malformed(format!(
            "unrecognized tracking header `{}`",
            String::from_utf8_lossy(header.as_slice())
        )));
    };
    let mut out = Vec::new();
    let mut rec = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut rec)? {
        let line = rec.position().map_or(0, |p| p.line());
        let a = parse_f64(&rec[4], line, "x/lat")?;
        let b = parse_f64(&rec[5], line, "y/lon")?;
        let position = match mode {
            PositionMode::Pitch => RawPosition::Pitch([a, b]),
            PositionMode::Geo => RawPosition::Geo(GeoPoint::new(a, b)),
        };
        out.push(RawSample {
            match_id: text(&rec[0], line)?,
            player_id: text(&rec[1], line)?,
            team: text(&rec[2], line)?,
            t: parse_f64(&rec[3], line, "t")?,
            position,
            speed: parse_f64(&rec[6], line, "speed")?,
        });
    }
    Ok((mode, out))
}

/// Writes samples in the mode of the first sample (pitch mode when empty).
/// Times are written with one decimal, positions with millimeter precision
/// in pitch mode, speed in shortest round-trip form.
pub fn write_tracking<W: Write>(writer: W, samples: &[RawSample]) -> Result<(), IngestError> {
    let mode = match samples.first().map(|s| s.position) {
        Some(RawPosition::Geo(_)) => PositionMode::Geo,
        _ => PositionMode::Pitch,
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(match mode {
        PositionMode::Pitch => PITCH_HEADER,
        PositionMode::Geo => GEO_HEADER,
    })?;
    for s in samples {
        let (a, b) = match (mode, s.position) {
            (PositionMode::Pitch, RawPosition::Pitch(p)) => (format!("{:.3}", p[0]), format!("{:.3}", p[1])),
            (PositionMode::Geo, RawPosition::Geo(g)) => (format!("{:.9}", g.lat), format!("{:.9}", g.lon)),
            _ => return Err(IngestError::Malformed("mixed position modes in one tracking file".into())),
        };
        w.write_record([
            s.match_id.as_str(),
            s.player_id.as_str(),
            s.team.as_str(),
            &format!("{:.1}", s.t),
            &a,
            &b,
            &format!("{}", s.speed),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(reader: R) -> Result<Vec<MatchEvent>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    if !check_header(&rdr.byte_headers()?.clone(), &EVENTS_HEADER) {
        return Err(IngestError::Malformed("unrecognized events header".into()));
    }
    let mut out = Vec::new();
    let mut rec = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut rec)? {
        let line = rec.position().map_or(0, |p| p.line());
        let kind: EventKind = text(&rec[1], line)?.parse()?;
        let team = text(&rec[3], line)?;
        out.push(MatchEvent {
            match_id: text(&rec[0], line)?,
            kind,
            t: parse_f64(&rec[2], line, "t")?,
            team: (!team.is_empty()).then_some(team),
        });
    }
    Ok(out)
}

pub fn write_events<W: Write>(writer: W, events: &[MatchEvent]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EVENTS_HEADER)?;
    for e in events {
        w.write_record([
            e.match_id.as_str(),
            e.kind.as_str(),
            &format!("{}", e.t),
            e.team.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows are grouped by player, each player's rows in time order. Values use
/// shortest round-trip formatting so a read-back is exact.
pub fn write_phase<W: Write>(writer: W, phase: &TrackedPhase) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PHASE_HEADER)?;
    for p in &phase.players {
        for i in 0..p.len() {
            w.write_record([
                phase.phase_id.as_str(),
                p.player_id.as_str(),
                p.team.as_str(),
                &format!("{}", p.t[i]),
                &format!("{}", p.pos[i][0]),
                &format!("{}", p.pos[i][1]),
                &format!("{}", p.vel[i][0]),
                &format!("{}", p.vel[i][1]),
                if p.in_bounds[i] { "1" } else { "0" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a phase file back. The interval and match id are not stored in the
/// file and must be supplied (the ingest stage keeps them in its index).
pub fn read_phase<R: Read>(reader: R, match_id: &str, interval: PhaseInterval) -> Result<TrackedPhase, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    if !check_header(&rdr.byte_headers()?.clone(), &PHASE_HEADER) {
        return Err(IngestError::Malformed("unrecognized phase header".into()));
    }
    let mut phase_id = None;
    let mut players: Vec<PlayerTrack> = Vec::new();
    let mut rec = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut rec)? {
        let line = rec.position().map_or(0, |p| p.line());
        if phase_id.is_none() {
            phase_id = Some(text(&rec[0], line)?);
        }
        let player = &rec[1];
        if players.last().is_none_or(|p| p.player_id.as_bytes() != player) {
            players.push(PlayerTrack::new(&text(player, line)?, &text(&rec[2], line)?));
        }
        let in_bounds = match &rec[8] {
            b"1" => true,
            b"0" => false,
            _ => return Err(IngestError::Malformed(format!("line {line}: bad in_bounds flag"))),
        };
        players.last_mut().expect("pushed above").push(
            parse_f64(&rec[3], line, "t")?,
            [parse_f64(&rec[4], line, "s_x")?, parse_f64(&rec[5], line, "s_y")?],
            [parse_f64(&rec[6], line, "v_x")?, parse_f64(&rec[7], line, "v_y")?],
            in_bounds,
        );
    }
    Ok(TrackedPhase {
        phase_id: phase_id.unwrap_or_default(),
        match_id: match_id.to_string(),
        interval,
        players,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracking_round_trip_pitch_mode() {
        let rows = vec![RawSample {
            match_id: "m1".into(),
            player_id: "p7".into(),
            team: "a".into(),
            t: 12.3,
            position: RawPosition::Pitch([10.125, 33.5]),
            speed: 4.123_456_789_012_3,
        }];
        let mut buf = Vec::new();
        write_tracking(&mut buf, &rows).unwrap();
        let (mode, back) = read_tracking(&buf[..]).unwrap();
        assert_eq!(mode, PositionMode::Pitch);
        assert_eq!(back, rows);
    }

    #[test]
    fn geo_header_selects_geo_mode() {
        let data = "match_id,player_id,team,t,lat,lon,speed\nm,p,a,0.1,37.5,127.0,3.2\n";
        let (mode, rows) = read_tracking(data.as_bytes()).unwrap();
        assert_eq!(mode, PositionMode::Geo);
        assert_eq!(rows[0].position, RawPosition::Geo(GeoPoint::new(37.5, 127.0)));
    }

    #[test]
    fn malformed_rows_are_reported() {
        let data = "match_id,player_id,team,t,x,y,speed\nm,p,a,zero,1,2,3\n";
        assert!(matches!(read_tracking(data.as_bytes()), Err(IngestError::Malformed(_))));
        assert!(read_tracking("a,b\n1,2\n".as_bytes()).is_err());
        let ev = "match_id,event_type,t,team\nm,goal,3,a\n";
        assert!(read_events(ev.as_bytes()).is_err());
    }

    #[test]
    fn phase_round_trip() {
        let mut track = PlayerTrack::new("p1", "a");
        track.push(0.0, [1.5, 2.25], [0.1, -0.2], true);
        track.push(0.1, [1.6, 2.2], [0.3, -0.1], false);
        let phase = TrackedPhase {
            phase_id: "m1-p00".into(),
            match_id: "m1".into(),
            interval: PhaseInterval { half: 0, start: 0.0, end: 10.0 },
            players: vec![track],
        };
        let mut buf = Vec::new();
        write_phase(&mut buf, &phase).unwrap();
        let back = read_phase(&buf[..], "m1", phase.interval).unwrap();
        assert_eq!(back, phase);
    }
}
