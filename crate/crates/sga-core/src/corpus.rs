//! Annotation ingestion and serialization. One JSON document per corpus:
//!
//! ```text
//! { "object_classes": [...], "predicate_classes": [...],
//!   "videos": [ { "id": str, "frames": [
//!       { "frame": int,
//!         "objects": [ { "category": int, "bbox": [f,f,f,f] } ],
//!         "relationships": [ { "subject": int, "object": int, "predicate": int } ] }
//!   ] } ] }
//! ```
//!
//! Loading validates every structural invariant and drops videos with fewer
//! than 3 annotated frames; videos come back sorted by id so downstream
//! iteration order is reproducible.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{SgaError, SgaResult};
use crate::graph::{
    Corpus, ObjectInstance, RelationshipTriplet, SceneGraph, Taxonomy, VideoAnnotation,
};

pub const MIN_FRAMES: usize = 3;

#[derive(Debug, Serialize, Deserialize)]
struct CorpusDoc {
    object_classes: Vec<String>,
    predicate_classes: Vec<String>,
    videos: Vec<VideoDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoDoc {
    id: String,
    frames: Vec<FrameDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameDoc {
    frame: usize,
    objects: Vec<ObjectDoc>,
    relationships: Vec<RelationshipDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectDoc {
    category: usize,
    bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationshipDoc {
    subject: usize,
    object: usize,
    predicate: usize,
}

pub fn load_corpus(path: impl AsRef<Path>) -> SgaResult<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| SgaError::io(path.display().to_string(), e))?;
    let doc: CorpusDoc = serde_json::from_str(&text).map_err(|e| SgaError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(), // serde_json includes line/column context
    })?;
    corpus_from_doc(doc)
}

fn corpus_from_doc(doc: CorpusDoc) -> SgaResult<Corpus> {
    let taxonomy = Arc::new(Taxonomy {
        object_classes: doc.object_classes,
        predicate_classes: doc.predicate_classes,
    });
    let mut videos = Vec::new();
    let mut seen_ids: Vec<&str> = Vec::new();
    for v in &doc.videos {
        if seen_ids.contains(&v.id.as_str()) {
            return Err(SgaError::Corpus {
                video: v.id.clone(),
                frame: None,
                msg: "duplicate video id".into(),
            });
        }
        seen_ids.push(&v.id);
    }
    for v in doc.videos {
        let mut frames: Vec<SceneGraph> = Vec::with_capacity(v.frames.len());
        for f in v.frames {
            let graph = SceneGraph {
                frame_index: f.frame,
                objects: f
                    .objects
                    .into_iter()
                    .map(|o| ObjectInstance { category: o.category, bbox: o.bbox })
                    .collect(),
                triplets: f
                    .relationships
                    .into_iter()
                    .map(|r| RelationshipTriplet {
                        subject_idx: r.subject,
                        object_idx: r.object,
                        predicate: r.predicate,
                        score: None,
                    })
                    .collect(),
            };
            graph.validate(&taxonomy).map_err(|msg| SgaError::Corpus {
                video: v.id.clone(),
                frame: Some(graph.frame_index),
                msg,
            })?;
            frames.push(graph);
        }
        frames.sort_by_key(|g| g.frame_index);
        if let Some(w) = frames.windows(2).find(|w| w[0].frame_index == w[1].frame_index) {
            return Err(SgaError::Corpus {
                video: v.id.clone(),
                frame: Some(w[0].frame_index),
                msg: "duplicate frame_index".into(),
            });
        }
        if frames.len() < MIN_FRAMES {
            continue; // too short to observe 3 frames; dropped, not an error
        }
        videos.push(VideoAnnotation {
            video_id: v.id,
            frames,
            taxonomy: Arc::clone(&taxonomy),
        });
    }
    videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(Corpus { taxonomy, videos })
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> SgaResult<()> {
    let path = path.as_ref();
    let doc = CorpusDoc {
        object_classes: corpus.taxonomy.object_classes.clone(),
        predicate_classes: corpus.taxonomy.predicate_classes.clone(),
        videos: corpus
            .videos
            .iter()
            .map(|v| VideoDoc {
                id: v.video_id.clone(),
                frames: v
                    .frames
                    .iter()
                    .map(|g| FrameDoc {
                        frame: g.frame_index,
                        objects: g
                            .objects
                            .iter()
                            .map(|o| ObjectDoc { category: o.category, bbox: o.bbox })
                            .collect(),
                        relationships: g
                            .triplets
                            .iter()
                            .map(|t| RelationshipDoc {
                                subject: t.subject_idx,
                                object: t.object_idx,
                                predicate: t.predicate,
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("corpus document serializes");
    std::fs::write(path, text).map_err(|e| SgaError::io(path.display().to_string(), e))
}
