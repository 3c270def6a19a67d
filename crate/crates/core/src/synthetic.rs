//! Seeded synthetic corpora and labeled sets with known structure, for
//! smoke runs and sanity checks of the whole pipeline.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::{Corpus, SourceTag};
use crate::dataset::{NerSentence, TcExample};
use crate::labels::{Bio, NerLabelSet};
use crate::rng;

/// `n` consecutive CJK ideographs starting `offset` past U+4E00.
pub fn cjk_block(offset: u32, n: usize) -> Vec<String> {
    (0..n as u32)
        .map(|i| char::from_u32(0x4E00 + offset + i).expect("inside the CJK block").to_string())
        .collect()
}

/// Lines of 8 words drawn from one of two disjoint 10-word clusters, so
/// words only ever co-occur with their own cluster.
pub struct ClusterCorpus {
    pub corpus: Corpus,
    pub clusters: [Vec<String>; 2],
}

pub fn two_cluster_corpus(lines: usize, seed: u64) -> ClusterCorpus {
    let clusters = [cjk_block(0, 10), cjk_block(100, 10)];
    let mut r = rng::stream(seed, "synthetic.clusters");
    let text: Vec<String> = (0..lines)
        .map(|_| {
            let c = &clusters[r.random_range(0..2)];
            (0..8).map(|_| c.choose(&mut r).unwrap().as_str()).collect()
        })
        .collect();
    ClusterCorpus {
        corpus: Corpus::from_lines(SourceTag::General, text),
        clusters,
    }
}

/// Texts whose class is given away by a class-specific keyword among
/// shared filler characters.
pub fn separable_tc(n: usize, seed: u64) -> Vec<TcExample> {
    let keys = cjk_block(200, 7);
    let filler = cjk_block(300, 6);
    let mut r = rng::stream(seed, "synthetic.tc");
    (0..n)
        .map(|i| {
            let label = i % keys.len();
            let len = r.random_range(3..7);
            let at = r.random_range(0..=len);
            let mut words: Vec<&str> = (0..len).map(|_| filler.choose(&mut r).unwrap().as_str()).collect();
            words.insert(at, &keys[label]);
            TcExample {
                label,
                text: words.concat(),
            }
        })
        .collect()
}

/// Sentences of filler tokens with one or two entities; each label has its
/// own entity characters, so tags are determined by token identity.
pub fn separable_ner(n: usize, seed: u64) -> Vec<NerSentence> {
    let set = NerLabelSet::new();
    let entity: Vec<Vec<String>> = (0..set.num_labels()).map(|l| cjk_block(400 + 10 * l as u32, 3)).collect();
    let filler = cjk_block(500, 5);
    let mut r = rng::stream(seed, "synthetic.ner");
    (0..n)
        .map(|i| {
            let (mut tokens, mut tags) = (Vec::new(), Vec::new());
            let spans = 1 + i % 2;
            for s in 0..spans {
                for _ in 0..r.random_range(1..3) {
                    tokens.push(filler.choose(&mut r).unwrap().clone());
                    tags.push(set.encode(Bio::O));
                }
                let label = (i + 3 * s) % set.num_labels();
                for k in 0..r.random_range(1..4) {
                    tokens.push(entity[label].choose(&mut r).unwrap().clone());
                    tags.push(set.encode(if k == 0 { Bio::B(label) } else { Bio::I(label) }));
                }
            }
            tokens.push(filler.choose(&mut r).unwrap().clone());
            tags.push(set.encode(Bio::O));
            NerSentence { tokens, tags }
        })
        .collect()
}

/// A domain-shift setup. Seven topics own six tokens each. In the domain
/// corpus a line mixes tokens of one topic; in the general corpus a line
/// mixes tokens sharing a position index across topics, so the two corpora
/// have disjoint collocations over the same vocabulary. Classification
/// trains on topic tokens 0..3 and validates on the unseen tokens 3..6,
/// which only domain co-occurrence links to their topic.
pub struct DomainShift {
    pub general: Corpus,
    pub domain: Corpus,
    pub held_out_domain: Corpus,
    pub train: Vec<TcExample>,
    pub val: Vec<TcExample>,
    pub topics: Vec<Vec<String>>,
}

pub const TOPICS: usize = 7;
pub const TOPIC_TOKENS: usize = 6;

pub fn domain_shift(lines: usize, line_len: usize, examples_per_class: usize, seed: u64) -> DomainShift {
    let topics: Vec<Vec<String>> = (0..TOPICS)
        .map(|t| cjk_block(1000 + (t * TOPIC_TOKENS) as u32, TOPIC_TOKENS))
        .collect();
    let mut r = rng::stream(seed, "synthetic.domain");
    // Runs of four lines share a topic so adjacent lines are related.
    let domain_lines = |n: usize, r: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        let mut topic = 0;
        for i in 0..n {
            if i % 4 == 0 {
                topic = r.random_range(0..TOPICS);
            }
            out.push((0..line_len).map(|_| topics[topic].choose(r).unwrap().as_str()).collect());
        }
        out
    };
    let domain = domain_lines(lines, &mut r);
    let held_out = domain_lines(lines / 4, &mut r);
    let mut general: Vec<String> = Vec::with_capacity(lines);
    let mut slot = 0;
    for i in 0..lines {
        if i % 4 == 0 {
            slot = r.random_range(0..TOPIC_TOKENS);
        }
        general.push(
            (0..line_len)
                .map(|_| topics[r.random_range(0..TOPICS)][slot].as_str())
                .collect(),
        );
    }
    let examples = |range: std::ops::Range<usize>, r: &mut rand_chacha::ChaCha8Rng| -> Vec<TcExample> {
        let mut out = Vec::new();
        for _ in 0..examples_per_class {
            for (label, words) in topics.iter().enumerate() {
                let text = (0..line_len).map(|_| words[r.random_range(range.clone())].as_str()).collect();
                out.push(TcExample { label, text });
            }
        }
        out
    };
    let train = examples(0..3, &mut r);
    let val = examples(3..TOPIC_TOKENS, &mut r);
    DomainShift {
        general: Corpus::from_lines(SourceTag::General, general),
        domain: Corpus::from_lines(SourceTag::InDomain, domain),
        held_out_domain: Corpus::from_lines(SourceTag::InDomain, held_out),
        train,
        val,
        topics,
    }
}
