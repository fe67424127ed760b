//! Synthetic language pairs for tests and benchmarks.
//!
//! The source language is generated from a small class grammar with
//! collocational preferences, so a language model has something to learn.
//! The target language is a word-for-word cipher of it, optionally with
//! adjective-noun order swapped. Embeddings are constructed so that each
//! source word and its cipher share a vector, plus optional noise on the
//! target side.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::EmbeddingSpace;

#[derive(Debug, Clone, PartialEq)]
pub struct CipherSpec {
    /// at least 50
    pub vocab: usize,
    /// monolingual sentences per side
    pub sentences: usize,
    pub dev: usize,
    pub test: usize,
    pub dim: usize,
    /// standard deviation of target-side embedding noise, relative to the
    /// norm of a word's own component
    pub noise: f64,
    /// put adjectives after nouns on the target side
    pub swap_adjectives: bool,
    pub seed: u64,
}

impl CipherSpec {
    /// Noise-free embeddings, no reordering.
    pub fn oracle(vocab: usize, sentences: usize, seed: u64) -> Self {
        CipherSpec {
            vocab,
            sentences,
            dev: 100,
            test: 200,
            dim: 48,
            noise: 0.0,
            swap_adjectives: false,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Det,
    Prep,
    Adv,
    Adj,
    Verb,
    Noun,
}

const CLASS_SHARE: [(Class, f64); 6] = [
    (Class::Det, 0.02),
    (Class::Prep, 0.04),
    (Class::Adv, 0.10),
    (Class::Adj, 0.20),
    (Class::Verb, 0.24),
    (Class::Noun, 0.40),
];

struct Grammar {
    words: BTreeMap<usize, Class>,
    members: Vec<(Class, Vec<usize>, WeightedIndex<f64>)>,
    /// preferred adjectives and verbs per noun, preferred objects per verb
    adj_pref: BTreeMap<usize, Vec<usize>>,
    verb_pref: BTreeMap<usize, Vec<usize>>,
    obj_pref: BTreeMap<usize, Vec<usize>>,
}

impl Grammar {
    fn new(vocab: usize, rng: &mut ChaCha8Rng) -> Grammar {
        let mut words = BTreeMap::new();
        let mut members = Vec::new();
        let mut next = 0;
        for (i, (class, share)) in CLASS_SHARE.iter().enumerate() {
            let n = if i + 1 == CLASS_SHARE.len() {
                vocab - next
            } else {
                ((vocab as f64 * share).round() as usize).max(1)
            };
            let ids: Vec<usize> = (next..next + n).collect();
            next += n;
            for &w in &ids {
                words.insert(w, *class);
            }
            // Zipfian within the class
            let weights = WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 1.0))).expect("positive weights");
            members.push((*class, ids, weights));
        }
        let mut g = Grammar {
            words,
            members,
            adj_pref: BTreeMap::new(),
            verb_pref: BTreeMap::new(),
            obj_pref: BTreeMap::new(),
        };
        for noun in g.ids(Class::Noun).to_vec() {
            let adjs = (0..3).map(|_| g.draw(Class::Adj, rng)).collect();
            let verbs = (0..3).map(|_| g.draw(Class::Verb, rng)).collect();
            g.adj_pref.insert(noun, adjs);
            g.verb_pref.insert(noun, verbs);
        }
        for verb in g.ids(Class::Verb).to_vec() {
            let objs = (0..3).map(|_| g.draw(Class::Noun, rng)).collect();
            g.obj_pref.insert(verb, objs);
        }
        g
    }

    fn ids(&self, class: Class) -> &[usize] {
        &self.members.iter().find(|m| m.0 == class).expect("every class").1
    }

    fn draw(&self, class: Class, rng: &mut ChaCha8Rng) -> usize {
        let (_, ids, weights) = self.members.iter().find(|m| m.0 == class).expect("every class");
        ids[weights.sample(rng)]
    }

    fn prefer(&self, prefs: &[usize], class: Class, rng: &mut ChaCha8Rng) -> usize {
        if rng.random_bool(0.7) {
            *prefs.choose(rng).expect("non-empty preferences")
        } else {
            self.draw(class, rng)
        }
    }

    fn noun_phrase(&self, noun: usize, rng: &mut ChaCha8Rng, out: &mut Vec<usize>) {
        out.push(self.draw(Class::Det, rng));
        if rng.random_bool(0.5) {
            out.push(self.prefer(&self.adj_pref[&noun], Class::Adj, rng));
        }
        out.push(noun);
    }

    /// NP [ADV] VERB NP [PREP NP]
    fn sentence(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut s = Vec::new();
        let subject = self.draw(Class::Noun, rng);
        self.noun_phrase(subject, rng, &mut s);
        if rng.random_bool(0.3) {
            s.push(self.draw(Class::Adv, rng));
        }
        let verb = self.prefer(&self.verb_pref[&subject], Class::Verb, rng);
        s.push(verb);
        let object = self.prefer(&self.obj_pref[&verb], Class::Noun, rng);
        self.noun_phrase(object, rng, &mut s);
        if rng.random_bool(0.4) {
            s.push(self.draw(Class::Prep, rng));
            let extra = self.draw(Class::Noun, rng);
            self.noun_phrase(extra, rng, &mut s);
        }
        s
    }
}

/// A generated language pair.
#[derive(Debug, Clone)]
pub struct CipherFixture {
    pub spec: CipherSpec,
    pub src_mono: Vec<Vec<String>>,
    pub tgt_mono: Vec<Vec<String>>,
    pub src_embeddings: EmbeddingSpace,
    pub tgt_embeddings: EmbeddingSpace,
    /// source word to its cipher
    pub dictionary: BTreeMap<String, String>,
    pub dev: (Vec<Vec<String>>, Vec<Vec<String>>),
    pub test: (Vec<Vec<String>>, Vec<Vec<String>>),
    classes: BTreeMap<usize, Class>,
    cipher: Vec<usize>,
}

/// Where [`CipherFixture::write`] put the files.
#[derive(Debug, Clone)]
pub struct FixtureFiles {
    pub src_mono: PathBuf,
    pub tgt_mono: PathBuf,
    pub src_embeddings: PathBuf,
    pub tgt_embeddings: PathBuf,
    pub dev_src: PathBuf,
    pub dev_ref: PathBuf,
    pub test_src: PathBuf,
    pub test_ref: PathBuf,
}

fn src_word(i: usize) -> String {
    format!("s{i}")
}

fn tgt_word(i: usize) -> String {
    format!("t{i}")
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

impl CipherFixture {
    pub fn generate(spec: &CipherSpec) -> CipherFixture {
        assert!(spec.vocab >= 50, "vocabulary too small for the grammar");
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
            r.set_stream(k);
            r
        };
        let mut rng = stream(0);
        let grammar = Grammar::new(spec.vocab, &mut rng);
        let mut cipher: Vec<usize> = (0..spec.vocab).collect();
        cipher.shuffle(&mut rng);

        // class centroid plus a word-specific component of equal scale
        let scale = 1.0 / (spec.dim as f64).sqrt();
        let centroids: BTreeMap<usize, Vec<f64>> = (0..CLASS_SHARE.len())
            .map(|c| (c, gaussian(&mut rng, spec.dim, scale)))
            .collect();
        let mut src_emb = EmbeddingSpace::new("src", spec.dim);
        let mut tgt_vectors: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for w in 0..spec.vocab {
            let class = grammar.words[&w];
            let c = &centroids[&(CLASS_SHARE.iter().position(|x| x.0 == class).expect("known class"))];
            let own = gaussian(&mut rng, spec.dim, scale);
            let v: Vec<f64> = c.iter().zip(&own).map(|(a, b)| a + b).collect();
            src_emb.insert(&src_word(w), &v);
            let noise = gaussian(&mut rng, spec.dim, scale * spec.noise);
            let t: Vec<f64> = v.iter().zip(&noise).map(|(a, b)| a + b).collect();
            tgt_vectors.insert(cipher[w], t);
        }
        let mut tgt_emb = EmbeddingSpace::new("tgt", spec.dim);
        for (id, v) in &tgt_vectors {
            tgt_emb.insert(&tgt_word(*id), v);
        }

        let mut fixture = CipherFixture {
            spec: spec.clone(),
            src_mono: Vec::new(),
            tgt_mono: Vec::new(),
            src_embeddings: src_emb,
            tgt_embeddings: tgt_emb,
            dictionary: (0..spec.vocab).map(|w| (src_word(w), tgt_word(cipher[w]))).collect(),
            dev: (Vec::new(), Vec::new()),
            test: (Vec::new(), Vec::new()),
            classes: grammar.words.clone(),
            cipher,
        };
        let sentences =
            |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<usize>> { (0..n).map(|_| grammar.sentence(rng)).collect() };
        let words = |ids: &[usize]| ids.iter().map(|&w| src_word(w)).collect::<Vec<_>>();

        fixture.src_mono = sentences(&mut stream(1), spec.sentences)
            .iter()
            .map(|s| words(s))
            .collect();
        fixture.tgt_mono = sentences(&mut stream(2), spec.sentences)
            .iter()
            .map(|s| fixture.encipher_ids(s))
            .collect();
        let parallel = |rng: &mut ChaCha8Rng, n: usize| {
            let ids = sentences(rng, n);
            let src: Vec<Vec<String>> = ids.iter().map(|s| words(s)).collect();
            let tgt: Vec<Vec<String>> = ids.iter().map(|s| fixture.encipher_ids(s)).collect();
            (src, tgt)
        };
        let dev = parallel(&mut stream(3), spec.dev);
        let test = parallel(&mut stream(4), spec.test);
        fixture.dev = dev;
        fixture.test = test;
        fixture
    }

    fn encipher_ids(&self, ids: &[usize]) -> Vec<String> {
        let mut order: Vec<usize> = ids.to_vec();
        if self.spec.swap_adjectives {
            let mut i = 0;
            while i + 1 < order.len() {
                if self.classes[&order[i]] == Class::Adj && self.classes[&order[i + 1]] == Class::Noun {
                    order.swap(i, i + 1);
                    i += 2;
                } else {
                    i += 1;
                }
            }
        }
        order.iter().map(|&w| tgt_word(self.cipher[w])).collect()
    }

    /// Reference translation of a source sentence of this fixture.
    pub fn encipher(&self, sentence: &[String]) -> Option<Vec<String>> {
        let ids: Option<Vec<usize>> = sentence
            .iter()
            .map(|w| {
                w.strip_prefix('s')
                    .and_then(|n| n.parse().ok())
                    .filter(|&i| i < self.spec.vocab)
            })
            .collect();
        ids.map(|ids| self.encipher_ids(&ids))
    }

    /// Write corpora, embeddings and dev/test files into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<FixtureFiles> {
        fs::create_dir_all(dir)?;
        let lines = |name: &str, data: &[Vec<String>]| -> io::Result<PathBuf> {
            let path = dir.join(name);
            let mut out = io::BufWriter::new(fs::File::create(&path)?);
            for s in data {
                writeln!(out, "{}", s.join(" "))?;
            }
            out.flush()?;
            Ok(path)
        };
        let vectors = |name: &str, space: &EmbeddingSpace| -> io::Result<PathBuf> {
            let path = dir.join(name);
            let mut out = io::BufWriter::new(fs::File::create(&path)?);
            space.write(&mut out)?;
            out.flush()?;
            Ok(path)
        };
        Ok(FixtureFiles {
            src_mono: lines("mono.src", &self.src_mono)?,
            tgt_mono: lines("mono.tgt", &self.tgt_mono)?,
            src_embeddings: vectors("emb.src.vec", &self.src_embeddings)?,
            tgt_embeddings: vectors("emb.tgt.vec", &self.tgt_embeddings)?,
            dev_src: lines("dev.src", &self.dev.0)?,
            dev_ref: lines("dev.tgt", &self.dev.1)?,
            test_src: lines("test.src", &self.test.0)?,
            test_ref: lines("test.tgt", &self.test.1)?,
        })
    }
}
