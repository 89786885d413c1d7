use super::{ModelError, EOS_ID};
use crate::scalar::Scalar;
use crate::textproc::Vocabulary;

/// A set of token ids permitted at a decoding step. Always contains EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllowedSet {
    mask: Vec<bool>,
}

impl AllowedSet {
    pub fn new(vocab_size: usize, ids: impl IntoIterator<Item = u32>) -> Result<Self, ModelError> {
        let mut mask = vec![false; vocab_size];
        if (EOS_ID as usize) >= vocab_size {
            return Err(ModelError::TokenOutOfRange);
        }
        mask[EOS_ID as usize] = true;
        for id in ids {
            *mask.get_mut(id as usize).ok_or(ModelError::TokenOutOfRange)? = true;
        }
        Ok(AllowedSet { mask })
    }

    pub fn contains(&self, id: u32) -> bool {
        self.mask.get(id as usize).copied().unwrap_or(false)
    }

    pub fn ids(&self) -> Vec<u32> {
        (0..self.mask.len() as u32).filter(|&i| self.mask[i as usize]).collect()
    }
}

/// Per-step restriction of the decoder's output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeConstraint {
    Unrestricted,
    /// The same allowed set at every step.
    Restricted(AllowedSet),
    /// `first` applies to the first emitted token, `rest` afterwards. With
    /// `no_repeat`, an id already emitted is not allowed again (EOS aside).
    Staged { first: AllowedSet, rest: AllowedSet, no_repeat: bool },
}

impl DecodeConstraint {
    /// Schema type and key tokens (plus EOS) at every step.
    pub fn special_tokens_only(vocab: &Vocabulary) -> Self {
        DecodeConstraint::Restricted(schema_set(vocab))
    }

    /// One type token, then distinct attribute-key tokens.
    pub fn first_token_must_be_type(vocab: &Vocabulary) -> Self {
        DecodeConstraint::Staged {
            first: AllowedSet::new(vocab.len(), vocab.type_ids()).expect("type ids in range"),
            rest: AllowedSet::new(vocab.len(), vocab.key_ids()).expect("key ids in range"),
            no_repeat: true,
        }
    }

    /// Whether `id` may follow the already emitted `history`.
    pub fn allows(&self, history: &[u32], id: u32) -> bool {
        match self {
            DecodeConstraint::Unrestricted => true,
            DecodeConstraint::Restricted(s) => s.contains(id),
            DecodeConstraint::Staged { first, rest, no_repeat } => {
                if history.is_empty() {
                    first.contains(id)
                } else {
                    rest.contains(id) && !(*no_repeat && id != EOS_ID && history.contains(&id))
                }
            }
        }
    }

    /// Highest-scoring allowed id; ties go to the lowest id.
    pub fn pick<T: Scalar>(&self, history: &[u32], logits: &[T]) -> u32 {
        let mut best: Option<(u32, T)> = None;
        for (i, &l) in logits.iter().enumerate() {
            let id = i as u32;
            if !self.allows(history, id) || l.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| l > b) {
                best = Some((id, l));
            }
        }
        best.map_or(EOS_ID, |(id, _)| id)
    }
}

fn schema_set(vocab: &Vocabulary) -> AllowedSet {
    AllowedSet::new(vocab.len(), vocab.type_ids().chain(vocab.key_ids())).expect("schema ids in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eos_always_allowed_and_ties_lowest() {
        let s = AllowedSet::new(10, [5, 7]).unwrap();
        assert!(s.contains(EOS_ID));
        assert_eq!(s.ids(), vec![EOS_ID, 5, 7]);
        let c = DecodeConstraint::Restricted(s);
        let logits = [9.0, 9.0, 9.0, 0.0, 9.0, 1.0, 1.0, 1.0, 9.0, 9.0];
        assert_eq!(c.pick(&[], &logits), 5);
        assert_eq!(DecodeConstraint::Unrestricted.pick(&[], &logits), 0);
    }

    #[test]
    fn staged_switches_after_first() {
        let c = DecodeConstraint::Staged {
            first: AllowedSet::new(10, [4]).unwrap(),
            rest: AllowedSet::new(10, [6, 7]).unwrap(),
            no_repeat: true,
        };
        let logits = [0.0f32; 10];
        assert_eq!(c.pick(&[], &logits), EOS_ID);
        let mut l = [0.0f32; 10];
        l[4] = 2.0;
        l[6] = 3.0;
        l[7] = 1.0;
        assert_eq!(c.pick(&[], &l), 4);
        assert_eq!(c.pick(&[4], &l), 6);
        assert_eq!(c.pick(&[4, 6], &l), 7);
        assert_eq!(c.pick(&[4, 6, 7], &l), EOS_ID);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(AllowedSet::new(10, [10]).is_err());
    }
}
