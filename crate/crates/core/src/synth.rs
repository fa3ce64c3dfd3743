//! A small synthetic corpus for end-to-end runs with the mock backend and
//! mock encoder.
//!
//! Half the records are NOOC: the second caption is a reordering of the
//! first, so after sanitization both carry the same token multiset. The other
//! half are OOC: the two captions share no token at all. Names in the captions
//! come from a bundled gazetteer and are replaced by class words during
//! sanitization. Each original image is the mock render of the first
//! caption's sanitized text under a different seed than generation uses.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, TaggerKind};
use crate::corpus::{CorpusError, Label, ManifestStore, Record};
use crate::genclient::{mock_image, BackendConfig};

/// Caption pairs with their gold label.
pub const SCENES: &[(&str, &str, Label)] = &[
    ("Maria Lopez walks her dog beside the river", "beside the river Maria Lopez walks her dog", Label::Nooc),
    ("Maria Lopez cooks dinner for her family", "Tourists crowd a beach in Lisbon during summer", Label::Ooc),
    ("Crowds gather in Lisbon for the summer festival", "for the summer festival crowds gather in Lisbon", Label::Nooc),
    ("Chen Wei delivers a speech to graduates", "Wildfire smoke darkens the sky over Porto", Label::Ooc),
    ("Volunteers plant trees along a quiet street", "along a quiet street volunteers plant trees", Label::Nooc),
    ("Farmers harvest rice in flooded fields", "Amara Okafor signs autographs after her concert", Label::Ooc),
    ("Chen Wei repairs an old bicycle in his garage", "in his garage Chen Wei repairs an old bicycle", Label::Nooc),
    ("Police officers direct traffic downtown", "Children build sandcastles on a sunny shore", Label::Ooc),
    ("Snow covers the mountain village at dawn", "at dawn snow covers the mountain village", Label::Nooc),
    ("Amara Okafor wins the marathon", "Soldiers patrol a snowy border crossing", Label::Ooc),
    ("Fishermen unload their catch at Porto harbor", "at Porto harbor fishermen unload their catch", Label::Nooc),
    ("Workers repair power lines after an ice storm", "Chen Wei opens his new bakery", Label::Ooc),
    ("Students protest outside the city hall", "outside the city hall students protest", Label::Nooc),
    ("A giant panda eats bamboo at the zoo", "Protesters march through Springfield with banners", Label::Ooc),
    ("Amara Okafor plays violin on a crowded train", "on a crowded train Amara Okafor plays violin", Label::Nooc),
    ("Maria Lopez paints a colorful mural", "Flood waters surround abandoned cars in Springfield", Label::Ooc),
    ("A farmer harvests wheat under a golden sky", "under a golden sky a farmer harvests wheat", Label::Nooc),
    ("Doctors treat patients in a field hospital", "Fireworks light up Lisbon at midnight", Label::Ooc),
    ("Engineers inspect the damaged bridge after the storm", "after the storm engineers inspect the damaged bridge", Label::Nooc),
    ("Astronauts wave before launch", "Chen Wei sells fresh fish at Porto market", Label::Ooc),
];

pub const GAZETTEER: &str = "Maria Lopez\tPERSON\nChen Wei\tPERSON\nAmara Okafor\tPERSON\n\
Lisbon\tGPE\nPorto\tGPE\nSpringfield\tGPE\n";

const ORIGINAL_SEED: u64 = 0x0a11_ce5e;
const ORIGINAL_SIZE: u32 = 256;

/// Replaces gazetteer names the way the sanitizer will, for rendering the
/// original image.
fn expected_clean(caption: &str) -> String {
    let mut s = caption.to_string();
    for line in GAZETTEER.lines() {
        let (name, label) = line.split_once('\t').expect("gazetteer line");
        let word = if label == "PERSON" { "Person" } else { "Location" };
        s = s.replace(name, word);
    }
    s
}

pub struct SynthCorpus {
    pub dir: PathBuf,
    pub config_path: PathBuf,
    pub manifest: PathBuf,
    pub records: usize,
}

/// Writes the corpus, its originals, a gazetteer and a `captioncheck.toml`
/// into `dir`. The config points every path inside `dir`.
pub fn build(dir: &Path) -> Result<SynthCorpus, CorpusError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| CorpusError::io(&p, e)
    };
    let originals = dir.join("originals");
    fs::create_dir_all(&originals).map_err(io(&originals))?;
    let gaz = dir.join("gazetteer.tsv");
    fs::write(&gaz, GAZETTEER).map_err(io(&gaz))?;

    let manifest = dir.join("manifest.jsonl");
    let mut store = ManifestStore::open(&manifest)?;
    for (i, (c1, c2, label)) in SCENES.iter().enumerate() {
        let id = format!("s{:02}", i + 1);
        let rel = PathBuf::from("originals").join(format!("{id}.png"));
        let png = mock_image(&expected_clean(c1), ORIGINAL_SEED, ORIGINAL_SIZE);
        fs::write(dir.join(&rel), png).map_err(io(&rel))?;
        store.append(Record::new(id, rel, *c1, *c2).with_gold(*label))?;
    }
    let records = store.len();
    drop(store);

    let mut cfg = RunConfig {
        manifest: "manifest.jsonl".into(),
        images_dir: "images".into(),
        models_dir: "models".into(),
        output_dir: "out".into(),
        cache_dir: "cache".into(),
        workers: 4,
        backends: vec![BackendConfig {
            size: 256,
            ..BackendConfig::mock("mock")
        }],
        ..Default::default()
    };
    cfg.sanitizer.first_tagger = TaggerKind::Gazetteer;
    cfg.sanitizer.gazetteer = Some("gazetteer.tsv".into());
    let config_path = dir.join("captioncheck.toml");
    fs::write(&config_path, cfg.to_toml()).map_err(io(&config_path))?;
    Ok(SynthCorpus {
        dir: dir.to_path_buf(),
        config_path,
        manifest,
        records,
    })
}
