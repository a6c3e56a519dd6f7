use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gridworld::{Corpus, Label};
use crate::policy::{gumbel_argmax, EncoderMode, SkillModel};

const HEADER: &str = "# traj\tstep\tlabel\tskill\taction\tembedding";

/// One exported transition: its skill embedding, selected skill, action and set.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub traj: usize,
    pub step: usize,
    pub label: Label,
    pub skill: usize,
    pub action: usize,
    pub z: Vec<f64>,
}

/// Bi-encoder embeddings and noise-free skill choices for every transition.
pub fn embedding_rows(model: &SkillModel<f32>, corpus: &Corpus) -> Result<Vec<EmbeddingRow>> {
    let refs = corpus.all_refs();
    let z = model.embed_corpus(corpus, &refs, EncoderMode::Bi)?;
    let p = model.skill_probs_corpus(corpus, &refs, EncoderMode::Bi)?;
    Ok(refs
        .iter()
        .zip(z)
        .zip(p)
        .map(|((&r, z), p)| EmbeddingRow {
            traj: corpus.trajectories[r.traj].id,
            step: r.step,
            label: corpus.label(r),
            skill: gumbel_argmax(&p, None, 1.0),
            action: corpus.transition(r).action,
            z,
        })
        .collect())
}

pub fn embeddings_to_text(rows: &[EmbeddingRow]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        let _ = write!(s, "{}\t{}\t{}\t{}\t{}\t", r.traj, r.step, r.label.as_str(), r.skill, r.action);
        for (i, v) in r.z.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_embeddings(text: &str) -> Result<Vec<EmbeddingRow>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line: no, msg };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(perr(format!("expected 6 tab-separated fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| perr(format!("bad integer {s:?}")));
        let z = f[5]
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|_| perr(format!("bad embedding component {v:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(EmbeddingRow {
            traj: num(f[0])?,
            step: num(f[1])?,
            label: Label::parse(f[2]).ok_or_else(|| perr(format!("bad label {:?}", f[2])))?,
            skill: num(f[3])?,
            action: num(f[4])?,
            z,
        });
    }
    Ok(out)
}

/// Writes one line per transition and returns the number of rows.
pub fn export_embeddings(model: &SkillModel<f32>, corpus: &Corpus, path: impl AsRef<Path>) -> Result<usize> {
    let rows = embedding_rows(model, corpus)?;
    let path = path.as_ref();
    std::fs::write(path, embeddings_to_text(&rows)).map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}
