//! Synthetic, linearly separable corpus written to a temp directory.
//!
//! 8 lessons across grades 9..=12 and all trimesters, 25 lines each, one
//! sentence per line: 100 engaging messages (50 gain, 50 loss framed) and
//! 100 neutral classroom sentences.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const LESSONS: usize = 8;
pub const LINES_PER_LESSON: usize = 25;

const GAIN: [&str; 5] = ["aprobaréis", "sacaréis", "lograréis", "conseguiréis", "ganaréis"];
const LOSS: [&str; 5] = ["suspenderéis", "perderéis", "repetiréis", "fallaréis", "bajaréis"];
const NEUTRAL: [&str; 5] = ["abrid", "copiad", "mirad", "sentaos", "cerrad"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Gain,
    Loss,
    Neutral,
}

pub fn kind_at(lesson: usize, line: usize) -> Kind {
    let k = lesson * LINES_PER_LESSON + line;
    match k % 4 {
        0 => Kind::Gain,
        1 => Kind::Loss,
        _ => Kind::Neutral,
    }
}

pub fn sentence(lesson: usize, line: usize) -> String {
    let k = lesson * LINES_PER_LESSON + line;
    match kind_at(lesson, line) {
        Kind::Gain => format!("Si estudiáis la unidad {k}, {} una nota excelente.", GAIN[k % 5]),
        Kind::Loss => format!("Si no entregáis la tarea {k}, {} la evaluación.", LOSS[k % 5]),
        Kind::Neutral => format!("Ahora {} el cuaderno en la página {k}.", NEUTRAL[k % 5]),
    }
}

pub fn lesson_id(lesson: usize) -> String {
    format!("s{lesson}")
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Fixture {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.dir.path().join("out").join(rel)
    }

    /// Rewrites the config with `extra` appended.
    pub fn with_extra(&self, extra: &str) {
        std::fs::write(&self.config, config_text(extra)).unwrap();
    }
}

fn config_text(extra: &str) -> String {
    format!(
        r#"[corpus]
manifest = "manifest.csv"

[dataset]
positive_fraction = 0.5
seed = 7

[gold]
identification = "gold_identification.csv"
frame = "gold_frame.csv"

[output]
dir = "out"
{extra}"#
    )
}

pub fn write_corpus(root: &Path) {
    std::fs::create_dir_all(root.join("lessons")).unwrap();
    let mut manifest = String::from("lesson_id,teacher_id,group_id,grade,trimester,date,path\n");
    let mut ident = String::from("ref,label\n");
    let mut frame = String::from("ref,label\n");
    for l in 0..LESSONS {
        let grade = 9 + l % 4;
        let trimester = 1 + l % 3;
        let group = format!("{grade}{}", if l < 4 { 'A' } else { 'B' });
        writeln!(
            manifest,
            "{},t{},{group},{grade},{trimester},2024-0{}-10,lessons/{}.txt",
            lesson_id(l),
            l % 3,
            1 + l % 9,
            lesson_id(l)
        )
        .unwrap();
        let mut text = String::new();
        for line in 0..LINES_PER_LESSON {
            writeln!(text, "{}", sentence(l, line)).unwrap();
            let r = format!("{}:{line}:0", lesson_id(l));
            match kind_at(l, line) {
                Kind::Gain => {
                    writeln!(ident, "{r},1").unwrap();
                    writeln!(frame, "{r},1").unwrap();
                }
                Kind::Loss => {
                    writeln!(ident, "{r},1").unwrap();
                    writeln!(frame, "{r},0").unwrap();
                }
                Kind::Neutral => writeln!(ident, "{r},0").unwrap(),
            }
        }
        std::fs::write(root.join("lessons").join(format!("{}.txt", lesson_id(l))), text).unwrap();
    }
    std::fs::write(root.join("manifest.csv"), manifest).unwrap();
    std::fs::write(root.join("gold_identification.csv"), ident).unwrap();
    std::fs::write(root.join("gold_frame.csv"), frame).unwrap();
}

pub fn fixture(extra: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let config = dir.path().join("engage.toml");
    std::fs::write(&config, config_text(extra)).unwrap();
    Fixture { dir, config }
}
