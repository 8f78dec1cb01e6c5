//! Versioned model persistence: everything the pipeline produces, in one
//! JSON document whose floats round-trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::BigramLm;
use crate::epenthesis::TransitionSet;
use crate::error::{Error, Result};
use crate::frames::{NormalizationStats, StreamLayout};
use crate::hmm::SignHmm;
use crate::isolated::StartCodebook;
use crate::tying::TiedModelSet;

pub const FORMAT_VERSION: u32 = 1;

/// Where a bundle came from: the seed and a digest of the producing
/// configuration.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_json: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(config_json.as_bytes());
        let digest = hasher.finalize();
        let mut hash = String::with_capacity(64);
        for byte in digest {
            hash.push_str(&format!("{byte:02x}"));
        }
        Provenance { seed, config_hash: hash }
    }
}

/// The persisted model set. Stages are optional so the same document grows
/// through train, tie, and train-transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub layout: StreamLayout,
    pub stats: NormalizationStats,
    /// Sign models sorted by id.
    pub signs: Vec<SignHmm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tied: Option<TiedModelSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_codebook: Option<StartCodebook>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<TransitionSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bigram: Option<BigramLm>,
    pub provenance: Provenance,
}

impl ModelBundle {
    pub fn new(layout: StreamLayout, stats: NormalizationStats, mut signs: Vec<SignHmm>, provenance: Provenance) -> Self {
        signs.sort_by(|a, b| a.id.cmp(&b.id));
        ModelBundle {
            version: FORMAT_VERSION,
            layout,
            stats,
            signs,
            tied: None,
            start_codebook: None,
            transitions: None,
            bigram: None,
            provenance,
        }
    }

    pub fn sign(&self, id: &str) -> Option<&SignHmm> {
        self.signs.binary_search_by(|s| s.id.as_str().cmp(id)).ok().map(|i| &self.signs[i])
    }

    pub fn tied(&self) -> Result<&TiedModelSet> {
        self.tied.as_ref().ok_or(Error::MissingStage("tie"))
    }

    pub fn start_codebook(&self) -> Result<&StartCodebook> {
        self.start_codebook.as_ref().ok_or(Error::MissingStage("tie"))
    }

    pub fn bigram(&self) -> Result<&BigramLm> {
        self.bigram.as_ref().ok_or(Error::MissingStage("bigram"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let bundle: ModelBundle = serde_json::from_str(json)?;
        if bundle.version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: bundle.version, expected: FORMAT_VERSION });
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let writer = BufWriter::new(File::create(path)?);
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let bundle: ModelBundle = serde_json::from_reader(reader)?;
        if bundle.version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: bundle.version, expected: FORMAT_VERSION });
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::StreamLayout;
    use crate::synth::{make_vocab, SynthConfig};
    use crate::tying::cluster_stream_states;

    fn small_bundle(seed: u64) -> ModelBundle {
        let layout = StreamLayout::standard();
        let cfg = SynthConfig { vocab_size: 4, seed, ..Default::default() };
        let (signs, lm) = make_vocab(&cfg, &layout).unwrap();
        let tied = cluster_stream_states(&signs, &layout, &[6; 6]).unwrap();
        let start = crate::isolated::build_subsets(&tied);
        let mut bundle = ModelBundle::new(
            layout,
            NormalizationStats::identity(),
            signs,
            Provenance::new(seed, "{\"test\":true}"),
        );
        bundle.tied = Some(tied);
        bundle.start_codebook = Some(start);
        bundle.bigram = Some(lm);
        bundle
    }

    #[test]
    fn json_round_trip_is_exact() {
        for seed in 0..5 {
            let bundle = small_bundle(seed);
            let json = bundle.to_json().unwrap();
            let back = ModelBundle::from_json(&json).unwrap();
            assert_eq!(back, bundle);
            // Serializing again yields byte-identical output.
            assert_eq!(back.to_json().unwrap(), json);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let bundle = small_bundle(3);
        bundle.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(back, bundle);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bundle = small_bundle(1);
        bundle.version = 99;
        let json = serde_json::to_string(&bundle).unwrap();
        match ModelBundle::from_json(&json) {
            Err(Error::VersionMismatch { found, expected }) => {
                assert_eq!(found, 99);
                assert_eq!(expected, FORMAT_VERSION);
            }
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_stages_are_reported() {
        let layout = StreamLayout::standard();
        let cfg = SynthConfig { vocab_size: 2, ..Default::default() };
        let (signs, _) = make_vocab(&cfg, &layout).unwrap();
        let bundle = ModelBundle::new(layout, NormalizationStats::identity(), signs, Provenance::default());
        assert!(matches!(bundle.tied(), Err(Error::MissingStage("tie"))));
        assert!(matches!(bundle.bigram(), Err(Error::MissingStage("bigram"))));
        assert!(bundle.sign("sign0000").is_some());
        assert!(bundle.sign("nope").is_none());
    }

    #[test]
    fn provenance_hash_is_stable() {
        let a = Provenance::new(1, "config");
        let b = Provenance::new(1, "config");
        let c = Provenance::new(1, "other");
        assert_eq!(a, b);
        assert_ne!(a.config_hash, c.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }
}
