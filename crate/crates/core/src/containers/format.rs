//! Reader for the container spec file.
//!
//! ```text
//! # comment
//! [container]
//! id = flask
//! kind = flask
//! body_width_mm = 100
//! ...
//! exit_point_mm = -32.3, 26.5, 0
//! ```
//!
//! Flask blocks take `body_width_mm, body_depth_mm, body_height_mm,
//! neck_length_mm, neck_width_mm, neck_tilt_deg` and optionally
//! `body_shoulder_mm` (length of the taper into the neck); bottle blocks take
//! `body_radius_mm, body_height_mm, neck_radius_mm, neck_length_mm`. Both
//! require `id, kind, opening_radius_mm, exit_point_mm, tcp_mm, capacity_ml`.
//! Any other key is an error.

use super::{ContainerSpec, Shape, SpecError, ML, MM};
use nalgebra::Point3;
use std::collections::BTreeMap;
use std::path::Path;

/// Bundled defaults: a T175-style culture flask and a 600 mL media bottle.
pub const DEFAULT_SPECS_TEXT: &str = include_str!("../../data/containers.cfg");

const COMMON_KEYS: &[&str] = &[
    "id",
    "kind",
    "opening_radius_mm",
    "exit_point_mm",
    "tcp_mm",
    "capacity_ml",
];
const FLASK_KEYS: &[&str] = &[
    "body_width_mm",
    "body_depth_mm",
    "body_height_mm",
    "body_shoulder_mm",
    "neck_length_mm",
    "neck_width_mm",
    "neck_tilt_deg",
];
const BOTTLE_KEYS: &[&str] = &[
    "body_radius_mm",
    "body_height_mm",
    "neck_radius_mm",
    "neck_length_mm",
];

struct Block {
    line: usize,
    entries: BTreeMap<String, (usize, String)>,
}

impl Block {
    fn raw(&self, key: &str) -> Result<(usize, &str), SpecError> {
        self.entries
            .get(key)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| SpecError::Parse {
                line: self.line,
                reason: format!("missing key '{key}' in [container] block"),
            })
    }

    fn number(&self, key: &str) -> Result<f64, SpecError> {
        let (line, v) = self.raw(key)?;
        v.parse::<f64>().map_err(|_| SpecError::Parse {
            line,
            reason: format!("'{key}' expects a number, got '{v}'"),
        })
    }

    fn point(&self, key: &str) -> Result<Point3<f64>, SpecError> {
        let (line, v) = self.raw(key)?;
        let parts: Result<Vec<f64>, _> = v.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parts {
            Ok(p) if p.len() == 3 => Ok(Point3::new(p[0], p[1], p[2]) * MM),
            _ => Err(SpecError::Parse {
                line,
                reason: format!("'{key}' expects three comma-separated numbers, got '{v}'"),
            }),
        }
    }

    fn into_spec(self) -> Result<ContainerSpec, SpecError> {
        let (kind_line, kind) = self.raw("kind")?;
        let allowed = match kind {
            "flask" => FLASK_KEYS,
            "bottle" => BOTTLE_KEYS,
            other => {
                return Err(SpecError::Parse {
                    line: kind_line,
                    reason: format!("unknown kind '{other}' (expected flask or bottle)"),
                })
            }
        };
        for (key, (line, _)) in &self.entries {
            if !COMMON_KEYS.contains(&key.as_str()) && !allowed.contains(&key.as_str()) {
                return Err(SpecError::Parse {
                    line: *line,
                    reason: format!("unknown key '{key}' for kind {kind}"),
                });
            }
        }
        let shape = if kind == "flask" {
            Shape::Flask {
                width: self.number("body_width_mm")? * MM,
                depth: self.number("body_depth_mm")? * MM,
                height: self.number("body_height_mm")? * MM,
                shoulder: match self.entries.contains_key("body_shoulder_mm") {
                    true => self.number("body_shoulder_mm")? * MM,
                    false => 0.0,
                },
                neck_length: self.number("neck_length_mm")? * MM,
                neck_radius: 0.5 * self.number("neck_width_mm")? * MM,
                neck_tilt: self.number("neck_tilt_deg")?.to_radians(),
            }
        } else {
            Shape::Bottle {
                radius: self.number("body_radius_mm")? * MM,
                height: self.number("body_height_mm")? * MM,
                neck_radius: self.number("neck_radius_mm")? * MM,
                neck_length: self.number("neck_length_mm")? * MM,
            }
        };
        let spec = ContainerSpec {
            id: self.raw("id")?.1.to_string(),
            shape,
            opening_radius: self.number("opening_radius_mm")? * MM,
            exit_point: self.point("exit_point_mm")?,
            tcp: self.point("tcp_mm")?,
            capacity: self.number("capacity_ml")? * ML,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Parses spec text; every returned spec has passed validation.
pub fn parse_container_specs(text: &str) -> Result<BTreeMap<String, ContainerSpec>, SpecError> {
    let mut blocks: Vec<Block> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            if content != "[container]" {
                return Err(SpecError::Parse {
                    line,
                    reason: format!("unknown section '{content}'"),
                });
            }
            blocks.push(Block {
                line,
                entries: BTreeMap::new(),
            });
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(SpecError::Parse {
                line,
                reason: format!("expected 'key = value', got '{content}'"),
            });
        };
        let Some(block) = blocks.last_mut() else {
            return Err(SpecError::Parse {
                line,
                reason: "key outside of a [container] block".into(),
            });
        };
        let key = key.trim().to_string();
        if block.entries.contains_key(&key) {
            return Err(SpecError::Parse {
                line,
                reason: format!("key '{key}' given twice"),
            });
        }
        block.entries.insert(key, (line, value.trim().to_string()));
    }

    let mut specs = BTreeMap::new();
    for block in blocks {
        let spec = block.into_spec()?;
        if specs.contains_key(&spec.id) {
            return Err(SpecError::DuplicateId(spec.id));
        }
        specs.insert(spec.id.clone(), spec);
    }
    Ok(specs)
}

pub fn load_container_specs(
    path: impl AsRef<Path>,
) -> Result<BTreeMap<String, ContainerSpec>, SpecError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SpecError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_container_specs(&text)
}

/// The bundled default specs.
pub fn default_specs() -> BTreeMap<String, ContainerSpec> {
    parse_container_specs(DEFAULT_SPECS_TEXT).expect("bundled container specs are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_defaults_contain_both_containers() {
        let specs = default_specs();
        assert!(specs.contains_key("flask"));
        assert!(specs.contains_key("media_bottle"));
        for spec in specs.values() {
            let v = spec.shape.interior_volume();
            assert!(v >= 0.9 * spec.capacity && v <= 1.1 * spec.capacity);
        }
    }

    #[test]
    fn empty_file_gives_empty_map() {
        assert!(parse_container_specs("").unwrap().is_empty());
        assert!(parse_container_specs("# nothing here\n\n")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn duplicate_id_is_named() {
        let one = DEFAULT_SPECS_TEXT
            .split("[container]")
            .nth(1)
            .expect("first block");
        let text = format!("[container]{one}\n[container]{one}");
        let err = parse_container_specs(&text).unwrap_err();
        assert_eq!(err, SpecError::DuplicateId("flask".into()));
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = DEFAULT_SPECS_TEXT.replacen("[container]\n", "[container]\ncolour = red\n", 1);
        let err = parse_container_specs(&text).unwrap_err();
        match err {
            SpecError::Parse { line, reason } => {
                assert!(reason.contains("colour"));
                let expected = text.lines().position(|l| l.starts_with("colour")).unwrap() + 1;
                assert_eq!(line, expected);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = "[container]\nid = x\nkind = bottle\nbody_radius_mm = wide\n";
        match parse_container_specs(text).unwrap_err() {
            SpecError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariant_violation_names_spec() {
        let text = DEFAULT_SPECS_TEXT.replacen("capacity_ml = 250", "capacity_ml = 400", 1);
        match parse_container_specs(&text).unwrap_err() {
            SpecError::Invalid { id, .. } => assert_eq!(id, "flask"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
