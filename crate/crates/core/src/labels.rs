//! Fixed label inventories for both tasks.

pub const TC_LABELS: [&str; 7] = ["direct", "indirect", "method", "reference", "general", "term", "others"];
pub const NER_LABELS: [&str; 7] = ["obj", "sobj", "prop", "cmp", "Rprop", "ARprop", "Robj"];

/// Text-classification categories in their fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TcLabelSet;

impl TcLabelSet {
    pub fn new() -> Self {
        TcLabelSet
    }

    pub fn len(&self) -> usize {
        TC_LABELS.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, id: usize) -> &'static str {
        TC_LABELS[id]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        TC_LABELS.iter().position(|l| *l == name)
    }
}

/// BIO tag space over the semantic labels: `O` = 0, `B-x` = 1 + 2i,
/// `I-x` = 2 + 2i for label index i.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NerLabelSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bio {
    O,
    B(usize),
    I(usize),
}

impl NerLabelSet {
    pub const NUM_TAGS: usize = 1 + 2 * NER_LABELS.len();

    pub fn new() -> Self {
        NerLabelSet
    }

    pub fn num_labels(&self) -> usize {
        NER_LABELS.len()
    }

    pub fn num_tags(&self) -> usize {
        Self::NUM_TAGS
    }

    pub fn label_name(&self, label: usize) -> &'static str {
        NER_LABELS[label]
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        NER_LABELS.iter().position(|l| *l == name)
    }

    pub fn decode(&self, tag: usize) -> Option<Bio> {
        match tag {
            0 => Some(Bio::O),
            t if t < Self::NUM_TAGS => {
                let label = (t - 1) / 2;
                Some(if t % 2 == 1 { Bio::B(label) } else { Bio::I(label) })
            }
            _ => None,
        }
    }

    pub fn encode(&self, bio: Bio) -> usize {
        match bio {
            Bio::O => 0,
            Bio::B(l) => 1 + 2 * l,
            Bio::I(l) => 2 + 2 * l,
        }
    }

    pub fn tag_name(&self, tag: usize) -> String {
        match self.decode(tag) {
            Some(Bio::O) => "O".to_string(),
            Some(Bio::B(l)) => format!("B-{}", NER_LABELS[l]),
            Some(Bio::I(l)) => format!("I-{}", NER_LABELS[l]),
            None => format!("<invalid {tag}>"),
        }
    }

    pub fn tag_id(&self, name: &str) -> Option<usize> {
        if name == "O" {
            return Some(0);
        }
        let (prefix, label) = name.split_once('-')?;
        let l = self.label_index(label)?;
        match prefix {
            "B" => Some(self.encode(Bio::B(l))),
            "I" => Some(self.encode(Bio::I(l))),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_ids_are_dense_and_invertible() {
        let s = NerLabelSet::new();
        assert_eq!(s.num_tags(), 15);
        for t in 0..15 {
            assert_eq!(s.tag_id(&s.tag_name(t)), Some(t));
            assert_eq!(s.encode(s.decode(t).unwrap()), t);
        }
        assert_eq!(s.tag_id("O"), Some(0));
        assert_eq!(s.tag_id("I-Robj"), Some(14));
        assert!(s.decode(15).is_none());
        assert_eq!(TcLabelSet::new().index_of("others"), Some(6));
    }
}
