//! Pipeline stages over a work directory.
//!
//! ```text
//! raw/tracking/<match>.csv   raw/events/<match>.csv   raw/truth.csv
//! phases/index.csv           phases/<phase>.csv
//! roles/labels.csv
//! heatmaps/single.txt        heatmaps/manifest.txt
//! dataset/{train,validation,test}.txt   dataset/split.tsv
//! model/model.bin            model/model.manifest     model/train_log.jsonl
//! embeddings/{train,test}.tsv
//! report/evaluation.json     report/rankings.tsv      report/table.txt
//! logs/<stage>.jsonl
//! ```
//!
//! Each stage reads only files written by earlier stages and is a pure
//! function of those files, the config and the root seed.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use playstyle_core::heatmap::{augment_split, phase_pair, read_store, split_dataset, write_manifest, write_store, HeatmapPair};
use playstyle_core::identify::{evaluate, render_table, write_rankings, Evaluation, LabeledEmbedding};
use playstyle_core::ingest::{
    ingest_match, read_events, read_phase, read_tracking, write_events, write_phase, write_tracking, GeoPoint, IngestTally,
    MatchEvents, PhaseInterval, PitchCalibration, PositionMode,
};
use playstyle_core::roles::{label_entities, label_phase, read_labels, write_labels, LabelRow, RolesExclusion};
use playstyle_core::synth::{write_truth, League, LeagueConfig};
use playstyle_net::checkpoint::{read_checkpoint, write_checkpoint};
use playstyle_net::trainer::{embed_pairs, train, Dataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::Failure;
use crate::io::{list, open, write_atomic, StageLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    Roles,
    Heatmaps,
    Augment,
    Train,
    Embed,
    Identify,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Roles,
        Stage::Heatmaps,
        Stage::Augment,
        Stage::Train,
        Stage::Embed,
        Stage::Identify,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Roles => "roles",
            Stage::Heatmaps => "heatmaps",
            Stage::Augment => "augment",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Identify => "identify",
            Stage::Report => "report",
        }
    }
}

/// A config bound to its work directory.
pub struct Workspace {
    pub root: PathBuf,
    pub cfg: PipelineConfig,
}

impl Workspace {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            root: cfg.paths.work.clone(),
            cfg,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        let mut log = StageLog::new(stage.name());
        log.record("start", json!({ "seed": self.cfg.seed }));
        match stage {
            Stage::Synth => self.synth(&mut log),
            Stage::Ingest => self.ingest(&mut log),
            Stage::Roles => self.roles(&mut log),
            Stage::Heatmaps => self.heatmaps(&mut log),
            Stage::Augment => self.augment(&mut log),
            Stage::Train => self.train(&mut log),
            Stage::Embed => self.embed(&mut log),
            Stage::Identify => self.identify(&mut log),
            Stage::Report => self.report(&mut log).map(|_| ()),
        }
        .with_context(|| format!("stage {}", stage.name()))?;
        log.record("done", json!({}));
        log.write(&self.path("logs"))
    }

    /// Runs `from` and every later stage in order.
    pub fn run_from(&self, from: Stage) -> Result<()> {
        for s in Stage::ALL.into_iter().filter(|&s| s >= from) {
            self.run(s)?;
        }
        Ok(())
    }

    fn synth(&self, log: &mut StageLog) -> Result<()> {
        let league = League::new(LeagueConfig {
            seed: self.cfg.seed,
            ..self.cfg.league.clone()
        })?;
        let truths = (0..league.fixtures.len())
            .into_par_iter()
            .map(|i| -> Result<_> {
                let m = league.generate_match(i)?;
                let id = &m.match_id;
                write_atomic(&self.path(&format!("raw/tracking/{id}.csv")), |w| Ok(write_tracking(w, &m.samples)?))?;
                write_atomic(&self.path(&format!("raw/events/{id}.csv")), |w| Ok(write_events(w, &m.events)?))?;
                Ok((m.match_id, m.samples.len(), m.truth))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (id, samples, truth) in truths {
            log.record("match", json!({ "match_id": id, "samples": samples, "truth_rows": truth.len() }));
            rows.extend(truth);
        }
        write_atomic(&self.path("raw/truth.csv"), |w| Ok(write_truth(w, &rows)?))?;
        log.record(
            "league",
            json!({ "matches": league.fixtures.len(), "teams": league.teams.len(), "truth_rows": rows.len() }),
        );
        Ok(())
    }

    fn calibration(&self) -> Result<Option<PitchCalibration>> {
        let Some(path) = &self.cfg.paths.calibration else {
            return Ok(None);
        };
        #[derive(Deserialize)]
        struct CalibrationFile {
            corners: [GeoPoint; 4],
        }
        let file: CalibrationFile = serde_json::from_reader(open(path)?).map_err(|e| Failure::malformed(path, e))?;
        let cal = PitchCalibration::new(file.corners, self.cfg.ingest.dims).map_err(|e| Failure::malformed(path, e))?;
        Ok(Some(cal))
    }

    fn ingest(&self, log: &mut StageLog) -> Result<()> {
        let tracking = list(&self.path("raw/tracking"), "csv")?;
        let calibration = self.calibration()?;
        let per_match = tracking
            .par_iter()
            .map(|path| -> Result<(Vec<PhaseRow>, IngestTally)> {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                let (mode, samples) = read_tracking(open(path)?).map_err(|e| Failure::malformed(path, e))?;
                if mode == PositionMode::Geo && calibration.is_none() {
                    return Err(Failure::Validation(format!("{} holds geo positions but no calibration is configured", path.display())).into());
                }
                let ev_path = self.path(&format!("raw/events/{stem}.csv"));
                let events = read_events(open(&ev_path)?).map_err(|e| Failure::malformed(&ev_path, e))?;
                let match_id = samples.first().map_or(stem.clone(), |s| s.match_id.clone());
                if let Some(s) = samples.iter().find(|s| s.match_id != match_id) {
                    return Err(Failure::malformed(path, format!("mixed match ids `{match_id}` and `{}`", s.match_id)).into());
                }
                let duration = samples
                    .iter()
                    .map(|s| s.t)
                    .chain(events.iter().map(|e| e.t))
                    .fold(0.0, f64::max);
                let summary = MatchEvents::from_events(duration, &events).map_err(|e| Failure::Validation(format!("{}: {e}", ev_path.display())))?;
                let out = ingest_match(&match_id, &samples, &summary, calibration.as_ref(), &self.cfg.ingest)
                    .map_err(|e| Failure::Validation(format!("match {match_id}: {e}")))?;
                let mut rows = Vec::new();
                for p in &out.phases {
                    write_atomic(&self.path(&format!("phases/{}.csv", p.phase_id)), |w| Ok(write_phase(w, p)?))?;
                    rows.push(PhaseRow {
                        phase_id: p.phase_id.clone(),
                        match_id: p.match_id.clone(),
                        half: p.interval.half,
                        start: p.interval.start,
                        end: p.interval.end,
                        players: p.players.len(),
                    });
                }
                Ok((rows, out.tally))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut index = Vec::new();
        let mut tally = IngestTally::default();
        for (rows, t) in per_match {
            tally.merge(&t);
            index.extend(rows);
        }
        write_atomic(&self.path("phases/index.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            for r in &index {
                c.serialize(r)?;
            }
            c.flush()?;
            Ok(())
        })?;
        log.record("tally", &tally);
        log.warn("samples out of bounds", tally.out_of_bounds);
        log.warn("samples outside both halves", tally.outside_halves);
        log.warn("tracks too short to differentiate", tally.short_tracks_dropped);
        log.warn("intervals absorbed into neighbouring phases", tally.absorbed());
        Ok(())
    }

    fn phase_index(&self) -> Result<Vec<PhaseRow>> {
        let path = self.path("phases/index.csv");
        let mut rdr = csv::Reader::from_reader(open(&path)?);
        let rows = rdr
            .deserialize()
            .collect::<Result<Vec<PhaseRow>, _>>()
            .map_err(|e| Failure::malformed(&path, e))?;
        Ok(rows)
    }

    fn load_phase(&self, row: &PhaseRow) -> Result<playstyle_core::ingest::TrackedPhase> {
        let path = self.path(&format!("phases/{}.csv", row.phase_id));
        let interval = PhaseInterval {
            half: row.half,
            start: row.start,
            end: row.end,
        };
        Ok(read_phase(open(&path)?, &row.match_id, interval).map_err(|e| Failure::malformed(&path, e))?)
    }

    fn roles(&self, log: &mut StageLog) -> Result<()> {
        let index = self.phase_index()?;
        let per_phase = index
            .par_iter()
            .map(|row| -> Result<_> {
                let phase = self.load_phase(row)?;
                Ok(label_phase(&phase, &self.cfg.roles)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut too_few, mut no_common, mut low_coverage) = (0, 0, 0);
        let mut entities = Vec::new();
        for p in per_phase {
            for (team, why) in &p.excluded_teams {
                log.record("excluded_team", json!({ "team": team, "reason": format!("{why:?}") }));
                match why {
                    RolesExclusion::TooFewPlayers(_) => too_few += 1,
                    RolesExclusion::NoCommonFrames => no_common += 1,
                }
            }
            low_coverage += p.excluded_players;
            entities.extend(p.entities);
        }
        let labeling = label_entities(&entities, &self.cfg.cluster, self.cfg.seed);
        let rows: Vec<LabelRow> = entities
            .iter()
            .zip(&labeling.entity_of)
            .map(|(e, id)| LabelRow {
                player_id: e.player_id.clone(),
                phase_id: e.phase_id.clone(),
                role: e.role,
                mean_x: e.role_mean[0],
                mean_y: e.role_mean[1],
                entity_id: id.clone(),
            })
            .collect();
        write_atomic(&self.path("roles/labels.csv"), |w| Ok(write_labels(w, &rows)?))?;
        let players = labeling
            .entities
            .iter()
            .map(|e| e.player_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        log.record(
            "tally",
            json!({
                "phases": index.len(),
                "player_phases": rows.len(),
                "players": players,
                "entities": labeling.entities.len(),
                "teams_too_few_players": too_few,
                "teams_no_common_frames": no_common,
            }),
        );
        log.warn("players below the coverage threshold", low_coverage);
        Ok(())
    }

    fn heatmaps(&self, log: &mut StageLog) -> Result<()> {
        let index = self.phase_index()?;
        let labels_path = self.path("roles/labels.csv");
        let labels = read_labels(open(&labels_path)?).map_err(|e| Failure::malformed(&labels_path, e))?;
        let mut by_phase: BTreeMap<&str, Vec<&LabelRow>> = BTreeMap::new();
        for l in &labels {
            by_phase.entry(&l.phase_id).or_default().push(l);
        }
        if let Some(p) = by_phase.keys().find(|p| !index.iter().any(|r| r.phase_id == **p)) {
            return Err(Failure::Validation(format!("label file names unknown phase {p}")).into());
        }
        let per_phase = index
            .par_iter()
            .filter(|r| by_phase.contains_key(r.phase_id.as_str()))
            .map(|row| -> Result<Vec<(HeatmapPair, usize)>> {
                let phase = self.load_phase(row)?;
                by_phase[row.phase_id.as_str()]
                    .iter()
                    .map(|l| {
                        let track = phase.players.iter().find(|p| p.player_id == l.player_id).ok_or_else(|| {
                            Failure::Validation(format!("phase {} has no track for {}", row.phase_id, l.player_id))
                        })?;
                        Ok(phase_pair(track, &l.entity_id, &row.phase_id, &self.cfg.heatmap))
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut dropped, mut empty) = (0, 0);
        let mut pairs = Vec::with_capacity(labels.len());
        for (pair, d) in per_phase.into_iter().flatten() {
            dropped += d;
            if pair.location.total() == 0 {
                empty += 1;
            }
            pairs.push(pair);
        }
        write_atomic(&self.path("heatmaps/single.txt"), |w| Ok(write_store(w, &pairs)?))?;
        let ids: Vec<String> = pairs.iter().map(HeatmapPair::record_id).collect();
        write_atomic(&self.path("heatmaps/manifest.txt"), |w| Ok(write_manifest(w, &ids)?))?;
        log.record("tally", json!({ "pairs": pairs.len() }));
        log.warn("samples outside the location grid", dropped);
        log.warn("entities with no in-bounds samples (zero grids)", empty);
        Ok(())
    }

    fn read_pairs(&self, rel: &str) -> Result<Vec<HeatmapPair>> {
        let path = self.path(rel);
        Ok(read_store(open(&path)?).map_err(|e| Failure::malformed(&path, e))?)
    }

    fn augment(&self, log: &mut StageLog) -> Result<()> {
        let singles = self.read_pairs("heatmaps/single.txt")?;
        let split = split_dataset(singles, &self.cfg.split, self.cfg.seed);
        write_atomic(&self.path("dataset/split.tsv"), |w| {
            writeln!(w, "set\trecord")?;
            for (set, pairs) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
                for p in pairs {
                    writeln!(w, "{set}\t{}", p.record_id())?;
                }
            }
            Ok(())
        })?;
        let aug = augment_split(&split, &self.cfg.augment, self.cfg.seed);
        for (set, pairs, single) in [
            ("train", &aug.train, &split.train),
            ("validation", &aug.validation, &split.validation),
            ("test", &aug.test, &split.test),
        ] {
            write_atomic(&self.path(&format!("dataset/{set}.txt")), |w| Ok(write_store(w, pairs)?))?;
            log.record(
                set,
                json!({ "phases": single.len(), "entities": entity_count(single), "augmented": pairs.len() }),
            );
        }
        let few = split.phase_counts.values().filter(|&&c| c < self.cfg.augment.combination).count();
        log.warn("entities with too few training phases to augment", few);
        Ok(())
    }

    fn train(&self, log: &mut StageLog) -> Result<()> {
        let train_set = Dataset::from_pairs(&self.read_pairs("dataset/train.txt")?);
        let val_set = Dataset::from_pairs(&self.read_pairs("dataset/validation.txt")?);
        log.record(
            "data",
            json!({
                "train": train_set.len(), "train_identities": train_set.identities.len(),
                "validation": val_set.len(), "validation_identities": val_set.identities.len(),
            }),
        );
        let out = train(&train_set, &val_set, &self.cfg.train, self.cfg.seed)
            .map_err(|e| Failure::Validation(format!("training: {e}")))?;
        write_atomic(&self.path("model/model.bin"), |w| Ok(write_checkpoint(w, &out.model)?))?;
        write_atomic(&self.path("model/train_log.jsonl"), |w| {
            for r in &out.log.records {
                writeln!(w, "{}", serde_json::to_string(r)?)?;
            }
            Ok(())
        })?;
        let best = out.log.best.map(|i| &out.log.records[i]);
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), self.cfg.seed.to_string());
        meta.insert("epochs".to_string(), out.log.records.len().to_string());
        meta.insert("diverged".to_string(), out.log.diverged.to_string());
        meta.insert("skipped_steps".to_string(), out.log.skipped_steps.to_string());
        if let Some(b) = best {
            meta.insert("best_epoch".to_string(), b.epoch.to_string());
            meta.insert("best_selection".to_string(), b.selection.to_string());
            meta.insert("best_val_accuracy".to_string(), format!("{:?}", b.val_accuracy));
        }
        write_atomic(&self.path("model/model.manifest"), |w| {
            Ok(playstyle_net::checkpoint::write_manifest(w, &out.model, &meta)?)
        })?;
        log.record("result", json!({ "epochs": out.log.records.len(), "best": best, "diverged": out.log.diverged }));
        log.warn("optimizer steps skipped for non-finite gradients", out.log.skipped_steps as usize);
        Ok(())
    }

    fn embed(&self, log: &mut StageLog) -> Result<()> {
        let model_path = self.path("model/model.bin");
        let model = read_checkpoint(open(&model_path)?).map_err(|e| Failure::malformed(&model_path, e))?;
        for set in ["train", "test"] {
            let pairs = self.read_pairs(&format!("dataset/{set}.txt"))?;
            let vectors = embed_pairs(&model, &pairs);
            write_atomic(&self.path(&format!("embeddings/{set}.tsv")), |w| {
                for (p, v) in pairs.iter().zip(&vectors) {
                    let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                    writeln!(w, "{}\t{}\t{}", p.entity_id, p.sources.join(","), vals.join(" "))?;
                }
                Ok(())
            })?;
            log.record(set, json!({ "embeddings": vectors.len(), "dim": model.embed_dim() }));
        }
        Ok(())
    }

    fn identify(&self, log: &mut StageLog) -> Result<()> {
        let train = read_embeddings(&self.path("embeddings/train.tsv"))?;
        let test = read_embeddings(&self.path("embeddings/test.tsv"))?;
        let eval = evaluate(&train, &test, &self.cfg.identify, self.cfg.seed).map_err(|e| Failure::Validation(e.to_string()))?;
        write_atomic(&self.path("report/evaluation.json"), |w| Ok(serde_json::to_writer_pretty(&mut *w, &eval)?))?;
        write_atomic(&self.path("report/rankings.tsv"), |w| Ok(write_rankings(w, &eval)?))?;
        for (entity, why) in &eval.excluded {
            log.record("excluded_probe", json!({ "entity": entity, "reason": why }));
        }
        log.record("result", json!({ "entities": eval.entities, "conditions": eval.reports.len() }));
        log.warn("probe entities excluded from the gallery", eval.excluded.len());
        Ok(())
    }

    /// Renders `report/table.txt` and returns its text.
    pub fn report(&self, log: &mut StageLog) -> Result<String> {
        let eval = self.evaluation()?;
        let table = render_table(&eval);
        write_atomic(&self.path("report/table.txt"), |w| Ok(w.write_all(table.as_bytes())?))?;
        for r in &eval.reports {
            log.record("condition", json!({ "condition": r.condition, "top_k": r.top_k, "mrr": r.mrr }));
        }
        Ok(table)
    }

    pub fn evaluation(&self) -> Result<Evaluation> {
        let path = self.path("report/evaluation.json");
        Ok(serde_json::from_reader(open(&path)?).map_err(|e| Failure::malformed(&path, e))?)
    }
}

/// One row of `phases/index.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub phase_id: String,
    pub match_id: String,
    pub half: usize,
    pub start: f64,
    pub end: f64,
    pub players: usize,
}

fn entity_count(pairs: &[HeatmapPair]) -> usize {
    pairs.iter().map(|p| p.entity_id.as_str()).collect::<std::collections::BTreeSet<_>>().len()
}

/// Parses `entity<TAB>source,source,...<TAB>v v v ...` lines.
pub fn read_embeddings(path: &Path) -> Result<Vec<LabeledEmbedding>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let bad = |m: &str| Failure::malformed(path, format!("line {}: {m}", i + 1));
        let mut parts = line.split('\t');
        let (Some(entity), Some(sources), Some(vals), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected three tab-separated fields").into());
        };
        let vector = vals
            .split(' ')
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad("bad vector component"))?;
        out.push(LabeledEmbedding {
            entity_id: entity.to_string(),
            sources: sources.split(',').map(str::to_string).collect(),
            vector,
        });
    }
    if let Some(d) = out.first().map(|e| e.vector.len()) {
        if out.iter().any(|e| e.vector.len() != d) {
            return Err(Failure::malformed(path, "embeddings differ in dimension").into());
        }
    }
    Ok(out)
}
