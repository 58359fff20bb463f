//! Templated descriptions in four length tiers, and the parser that reads
//! joint counts back out of them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::synth::{CapJoint, Category};

pub const TIERS: usize = 4;

const NUMBERS: [&str; 5] = ["no", "one", "two", "three", "four"];

/// Articulated children of the root, split by joint type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointCounts {
    pub prismatic: usize,
    pub revolute: usize,
}

/// Everything a template may mention about an object.
#[derive(Clone, Debug, PartialEq)]
pub struct Description {
    pub category: Category,
    pub drawers: usize,
    pub doors: usize,
    pub cap: CapJoint,
    pub size: &'static str,
    pub material: &'static str,
    /// Hinge side of a single door.
    pub side: &'static str,
}

fn counted(n: usize, singular: &str, adjective: Option<&str>) -> String {
    let noun = if n == 1 { singular.to_string() } else { format!("{singular}s") };
    match adjective {
        Some(a) if n > 0 => format!("{} {a} {noun}", NUMBERS[n]),
        _ => format!("{} {noun}", NUMBERS[n]),
    }
}

/// Text for one tier; longer tiers add size, material and usage phrases.
pub fn describe(d: &Description, tier: usize) -> String {
    let (size, material, side) = (d.size, d.material, d.side);
    match d.category {
        Category::Cabinet => {
            let (k, m) = (d.drawers, d.doors);
            match tier {
                0 => format!("cabinet with {} and {}", counted(k, "drawer", None), counted(m, "door", None)),
                1 => format!("a {size} cabinet with {} and {}", counted(k, "drawer", None), counted(m, "door", None)),
                2 => format!(
                    "a {size} {material} cabinet that has {} and {}",
                    counted(k, "drawer", Some("sliding")),
                    counted(m, "door", Some("hinged"))
                ),
                _ => format!(
                    "a {size} {material} storage cabinet for the living room that has {} above {} which swing outward",
                    counted(k, "drawer", Some("sliding")),
                    counted(m, "door", Some("hinged"))
                ),
            }
        }
        Category::Safe => match tier {
            0 => "safe with one door".to_string(),
            1 => format!("a {size} safe with one door"),
            2 => format!("a {size} {material} safe that has one hinged door"),
            _ => format!("a {size} {material} safe for storing valuables that has one hinged door on the {side} side"),
        },
        Category::Bottle => {
            let cap = match d.cap {
                CapJoint::Screw => "screw",
                CapJoint::Lift => "lift",
            };
            let motion = match d.cap {
                CapJoint::Screw => "that twists open",
                CapJoint::Lift => "that pulls straight up",
            };
            match tier {
                0 => format!("bottle with a {cap} cap"),
                1 => format!("a {size} bottle with a {cap} cap"),
                2 => format!("a {size} {material} bottle that has a {cap} cap"),
                _ => format!("a {size} {material} bottle for holding water that has a {cap} cap on top {motion}"),
            }
        }
    }
}

/// Two to four distinct tiers, shortest first.
pub fn variants<R: Rng + ?Sized>(d: &Description, rng: &mut R) -> Vec<String> {
    let keep = rng.gen_range(2..=TIERS);
    let mut tiers: Vec<usize> = (0..TIERS).collect();
    while tiers.len() > keep {
        let drop = rng.gen_range(0..tiers.len());
        tiers.remove(drop);
    }
    tiers.into_iter().map(|t| describe(d, t)).collect()
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Joint counts named by a description: drawers slide, doors and screw
/// caps turn, lift caps slide. `None` when the text names no moving part.
pub fn parse_counts(text: &str) -> Option<JointCounts> {
    let w = words(text);
    let mut out = JointCounts::default();
    let mut found = false;
    for (i, word) in w.iter().enumerate() {
        let slot = match word.as_str() {
            "drawer" | "drawers" => &mut out.prismatic,
            "door" | "doors" => &mut out.revolute,
            "cap" if i > 0 && w[i - 1] == "screw" => {
                out.revolute += 1;
                found = true;
                continue;
            }
            "cap" if i > 0 && w[i - 1] == "lift" => {
                out.prismatic += 1;
                found = true;
                continue;
            }
            _ => continue,
        };
        let n = w[i.saturating_sub(2)..i]
            .iter()
            .rev()
            .find_map(|x| NUMBERS.iter().position(|n| n == x));
        if let Some(n) = n {
            *slot += n;
            found = true;
        }
    }
    found.then_some(out)
}

/// Every word any template can produce.
pub fn vocabulary() -> Vec<String> {
    use super::synth::{MATERIALS, SIDES, SIZES};
    let mut v: Vec<String> = Vec::new();
    let mut add = |s: &str| v.extend(words(s));
    for cat in [Category::Cabinet, Category::Safe, Category::Bottle] {
        for cap in [CapJoint::Screw, CapJoint::Lift] {
            for (k, m) in [(1, 1), (2, 0), (0, 2)] {
                let d = Description {
                    category: cat,
                    drawers: k,
                    doors: m,
                    cap,
                    size: "",
                    material: "",
                    side: "",
                };
                for t in 0..TIERS {
                    add(&describe(&d, t));
                }
            }
        }
    }
    for w in NUMBERS.iter().chain(SIZES.iter().flat_map(|s| s.iter())) {
        add(w);
    }
    for w in MATERIALS.iter().flat_map(|s| s.iter()).chain(SIDES.iter()) {
        add(w);
    }
    add("drawer drawers door doors");
    v.sort();
    v.dedup();
    v
}
