//! Synthetic drawing study with planted group differences.
//!
//! Every drawing is its stimulus outline plus two to four disjoint straight
//! strokes. Generated (`ai`) drawings use a 9 px brush for everything, the
//! others a 3 px brush, which raises ink density only. Child drawings add
//! four to six isolated 3x3 dots, which raises the component count only.
//! Scores and categories carry no group effect.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIZE: usize = 400;
const MARGIN: f64 = 30.0;
const GAP: f64 = 25.0;
const THIN: i64 = 1;
const THICK: i64 = 4;

pub const SUBGROUPS: [(&str, &str); 6] = [
    ("pre_schematic", "child"),
    ("schematic", "child"),
    ("adult", "adult"),
    ("prompt1", "ai"),
    ("prompt2", "ai"),
    ("prompt3", "ai"),
];
const STIMULI: [&str; 3] = ["G", "I", "R"];
const CATEGORIES: [&str; 8] = ["animal", "house", "vehicle", "face", "plant", "tool", "food", "abstract"];

fn stimulus_path(shape: &str) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    match shape {
        // small open arc, too curved for any straight run to reach the minimum line length
        "G" => {
            for i in 0..=560 {
                let a = (40.0 + 280.0 * i as f64 / 560.0).to_radians();
                pts.push((200.0 + 40.0 * a.cos(), 200.0 + 40.0 * a.sin()));
            }
        }
        "I" => {
            for y in 130..=270 {
                pts.push((200.0, y as f64));
            }
        }
        _ => {
            for t in 0..=100 {
                let t = 150.0 + t as f64;
                pts.extend([(t, 150.0), (t, 250.0), (150.0, t), (250.0, t)]);
            }
        }
    }
    pts
}

fn segment_path(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<(f64, f64)> {
    let steps = ((x1 - x0).hypot(y1 - y0) * 2.0).ceil() as usize;
    (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            (x0 + t * (x1 - x0), y0 + t * (y1 - y0))
        })
        .collect()
}

fn min_gap(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    for p in a.iter().step_by(2) {
        for q in b.iter().step_by(2) {
            best = best.min((p.0 - q.0).hypot(p.1 - q.1));
        }
    }
    best
}

fn inside(p: (f64, f64)) -> bool {
    (MARGIN..SIZE as f64 - MARGIN).contains(&p.0) && (MARGIN..SIZE as f64 - MARGIN).contains(&p.1)
}

struct Sketch {
    paths: Vec<Vec<(f64, f64)>>,
    dots: Vec<(f64, f64)>,
}

fn sketch(shape: &str, dots: usize, rng: &mut ChaCha8Rng) -> Sketch {
    let mut paths = vec![stimulus_path(shape)];
    let strokes = rng.random_range(2..=4);
    while paths.len() < strokes + 1 {
        let len = rng.random_range(60.0..120.0);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let (x0, y0) = (rng.random_range(MARGIN..SIZE as f64 - MARGIN), rng.random_range(MARGIN..SIZE as f64 - MARGIN));
        let end = (x0 + len * angle.cos(), y0 + len * angle.sin());
        if !inside(end) {
            continue;
        }
        let seg = segment_path(x0, y0, end.0, end.1);
        if paths.iter().all(|p| min_gap(p, &seg) >= GAP) {
            paths.push(seg);
        }
    }
    let mut placed: Vec<(f64, f64)> = Vec::new();
    while placed.len() < dots {
        let c = (rng.random_range(MARGIN..SIZE as f64 - MARGIN), rng.random_range(MARGIN..SIZE as f64 - MARGIN));
        let far = paths.iter().all(|p| min_gap(p, &[c]) >= GAP)
            && placed.iter().all(|d| (d.0 - c.0).hypot(d.1 - c.1) >= GAP);
        if far {
            placed.push(c);
        }
    }
    Sketch { paths, dots: placed }
}

fn stamp(px: &mut [u8], x: f64, y: f64, half: i64) {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    for dy in -half..=half {
        for dx in -half..=half {
            let (xx, yy) = (cx + dx, cy + dy);
            if (0..SIZE as i64).contains(&xx) && (0..SIZE as i64).contains(&yy) {
                px[yy as usize * SIZE + xx as usize] = 0;
            }
        }
    }
}

fn render(s: &Sketch, half: i64) -> Vec<u8> {
    let mut px = vec![255u8; SIZE * SIZE];
    for path in &s.paths {
        for &(x, y) in path {
            stamp(&mut px, x, y, half);
        }
    }
    for &(x, y) in &s.dots {
        stamp(&mut px, x, y, 1);
    }
    px
}

fn save_png(px: Vec<u8>, path: &Path) {
    image::GrayImage::from_raw(SIZE as u32, SIZE as u32, px).unwrap().save(path).unwrap();
}

pub struct Study {
    pub config: PathBuf,
    pub n_drawings: usize,
}

/// Writes stimuli, drawings, manifest and a config pointing every provider
/// at `endpoint`.
pub fn generate(root: &Path, endpoint: &str, seed: u64) -> Study {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img_dir = root.join("drawings");
    std::fs::create_dir_all(&img_dir).unwrap();
    for shape in STIMULI {
        let s = Sketch {
            paths: vec![stimulus_path(shape)],
            dots: Vec::new(),
        };
        // the reference outline is drawn with the thick brush so its box covers every variant
        save_png(render(&s, THICK), &root.join(format!("stim_{shape}.png")));
    }

    let mut manifest = String::from(
        "drawing_id,group,subgroup,participant_id,stimulus,image_path,categories,expert1,expert2,audra,osc,used_stim\n",
    );
    let mut n = 0;
    for (subgroup, group) in SUBGROUPS {
        // (owners, drawings per stimulus per owner)
        let owners: Vec<(String, usize)> = match (group, subgroup) {
            ("ai", _) => vec![(format!("{subgroup}_gen"), 16)],
            ("adult", _) => (0..18).map(|i| (format!("{subgroup}_{i:02}"), 1)).collect(),
            _ => (0..17).map(|i| (format!("{subgroup}_{i:02}"), 1)).collect(),
        };
        for (owner, reps) in owners {
            for shape in STIMULI {
                for r in 0..reps {
                    let dots = if group == "child" { rng.random_range(4..=6) } else { 0 };
                    let half = if group == "ai" { THICK } else { THIN };
                    let id = format!("{owner}_{shape}{r:02}");
                    let file = img_dir.join(format!("{id}.png"));
                    save_png(render(&sketch(shape, dots, &mut rng), half), &file);
                    let k = rng.random_range(1..=2);
                    let cats: Vec<&str> = (0..k).map(|_| CATEGORIES[rng.random_range(0..CATEGORIES.len())]).collect();
                    let participant = if group == "ai" { format!("{owner}{r:02}") } else { owner.clone() };
                    writeln!(
                        manifest,
                        "{id},{group},{subgroup},{participant},{shape},drawings/{id}.png,{},{},{},{:.3},{:.3},{}",
                        cats.join("|"),
                        rng.random_range(0..=4),
                        rng.random_range(0..=4),
                        rng.random::<f64>(),
                        rng.random::<f64>(),
                        rng.random_range(0..=2),
                    )
                    .unwrap();
                    n += 1;
                }
            }
        }
    }
    std::fs::write(root.join("manifest.csv"), manifest).unwrap();

    let provider = |model: &str| {
        format!("endpoint = \"{endpoint}\"\nmodel_id = \"{model}\"\nbatch_size = 32\nbackoff_ms = 10\n")
    };
    let config = format!(
        "manifest = \"manifest.csv\"\nout_dir = \"out\"\ncache_dir = \"cache\"\nseed = 1\n\n\
         [stimuli]\nG = \"stim_G.png\"\nI = \"stim_I.png\"\nR = \"stim_R.png\"\n\n\
         [providers.image]\n{}\n[providers.text]\n{}\n[providers.caption]\n{}",
        provider("mock-image"),
        provider("mock-text"),
        provider("mock-caption"),
    );
    let path = root.join("creadraw.toml");
    std::fs::write(&path, config).unwrap();
    Study { config: path, n_drawings: n }
}
