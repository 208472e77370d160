//! Per-scene metadata consumed by the generator: frames, the objects visible
//! in each, and optional captions.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GenError;

const DEMO_SCENES: &str = include_str!("../../data/demo_scenes.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub name: String,
    pub category: String,
    #[serde(default = "one")]
    pub count_hint: u32,
    /// Name of the object this one rests on, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on: Option<String>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_id: u32,
    pub objects: Vec<ObjectMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl FrameMeta {
    /// Total `count_hint` of objects in `category`.
    pub fn category_count(&self, category: &str) -> u32 {
        self.objects
            .iter()
            .filter(|o| o.category == category)
            .map(|o| o.count_hint)
            .sum()
    }

    /// Total `count_hint` of objects in `category` resting on `surface`.
    pub fn count_on(&self, category: &str, surface: &str) -> u32 {
        self.objects
            .iter()
            .filter(|o| o.category == category && o.on.as_deref() == Some(surface))
            .map(|o| o.count_hint)
            .sum()
    }

    pub fn object(&self, name: &str) -> Option<&ObjectMeta> {
        self.objects.iter().find(|o| o.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_type: Option<String>,
    pub frames: Vec<FrameMeta>,
}

impl SceneMetadata {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidScene { scene_id: self.scene_id.clone(), message: m });
        let mut ids = BTreeSet::new();
        for f in &self.frames {
            if !ids.insert(f.frame_id) {
                return bad(format!("duplicate frame id {}", f.frame_id));
            }
            if f.objects.is_empty() {
                return bad(format!("frame {} has no objects", f.frame_id));
            }
            if let Some(o) = f.objects.iter().find(|o| o.count_hint == 0) {
                return bad(format!("object {:?} in frame {} has count_hint 0", o.name, f.frame_id));
            }
        }
        Ok(())
    }

    pub fn frame(&self, frame_id: u32) -> Option<&FrameMeta> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }
}

/// Parses either a single scene object or an array of scenes.
pub fn parse_scenes(json: &str) -> Result<Vec<SceneMetadata>, GenError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(SceneMetadata),
        Many(Vec<SceneMetadata>),
    }
    let scenes = match serde_json::from_str(json).map_err(|e| GenError::SceneFile(e.to_string()))? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    };
    for s in &scenes {
        s.validate()?;
    }
    Ok(scenes)
}

pub fn load_scenes(path: &Path) -> Result<Vec<SceneMetadata>, GenError> {
    let text = std::fs::read_to_string(path).map_err(|e| GenError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenes(&text)
}

/// Three small indoor scenes (office, living room, bedroom) shipped with the crate.
pub fn demo_scenes() -> Vec<SceneMetadata> {
    parse_scenes(DEMO_SCENES).expect("demo scenes are valid")
}
