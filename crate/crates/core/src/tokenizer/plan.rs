//! Mutual/distinct partition of a domain vocabulary against a pretrained one.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use crate::{Error, Result};

/// How domain tokens map onto the pretrained id space.
///
/// `mutual` and `distinct` are listed in domain-vocabulary rank (id) order.
/// Mutual tokens keep their pretrained id; distinct tokens take the ids no
/// mutual token uses, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePlan {
    pub mutual: Vec<String>,
    pub distinct: Vec<String>,
    pub id_assignment: BTreeMap<String, u32>,
    pub pretrained_capacity: usize,
}

impl MergePlan {
    /// Final ids of the mutual tokens.
    pub fn mutual_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.mutual.iter().map(|t| self.id_assignment[t])
    }

    pub fn distinct_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.distinct.iter().map(|t| self.id_assignment[t])
    }

    /// Checks the partition, index-preservation and injectivity invariants.
    pub fn validate(&self, pretrained: &Vocabulary, domain: &Vocabulary) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidVocabulary(msg));
        if self.mutual.len() + self.distinct.len() != domain.len() {
            return bad(alloc::format!(
                "plan covers {} tokens, domain has {}",
                self.mutual.len() + self.distinct.len(),
                domain.len()
            ));
        }
        let mut ids = BTreeSet::new();
        for (tok, &id) in &self.id_assignment {
            if !domain.contains(tok) {
                return bad(alloc::format!("assigned token {tok:?} not in the domain vocabulary"));
            }
            if id as usize >= self.pretrained_capacity || !ids.insert(id) {
                return bad(alloc::format!("id {id} for {tok:?} is out of range or duplicated"));
            }
        }
        for tok in &self.mutual {
            if pretrained.id(tok) != self.id_assignment.get(tok).copied() {
                return bad(alloc::format!("mutual token {tok:?} lost its pretrained id"));
            }
        }
        for tok in &self.distinct {
            if pretrained.contains(tok) || !self.id_assignment.contains_key(tok) {
                return bad(alloc::format!("distinct token {tok:?} is shared or unassigned"));
            }
        }
        Ok(())
    }
}

/// Partitions `domain` against `pretrained` and assigns final ids.
///
/// Comparison is on exact token strings (space marker included). Special
/// tokens of the domain vocabulary must exist in the pretrained one and are
/// therefore always mutual.
pub fn compute_merge_plan(pretrained: &Vocabulary, domain: &Vocabulary) -> Result<MergePlan> {
    pretrained.check_byte_level()?;
    domain.check_byte_level()?;
    let capacity = pretrained.capacity();
    if domain.len() > capacity {
        return Err(Error::DomainTooLarge { domain: domain.len(), capacity });
    }
    for (special, _) in domain.specials() {
        if !pretrained.contains(special) {
            return Err(Error::MissingSpecial(special.clone()));
        }
    }

    let mut mutual = Vec::new();
    let mut distinct = Vec::new();
    let mut id_assignment = BTreeMap::new();
    let mut used = alloc::vec![false; capacity];
    for (_, tok) in domain.iter_by_id() {
        match pretrained.id(tok) {
            Some(id) => {
                used[id as usize] = true;
                id_assignment.insert(String::from(tok), id);
                mutual.push(String::from(tok));
            }
            None => distinct.push(String::from(tok)),
        }
    }

    let free: Vec<u32> = (0..capacity as u32).filter(|&id| !used[id as usize]).collect();
    if distinct.len() > free.len() {
        return Err(Error::CapacityExceeded { distinct: distinct.len(), free: free.len() });
    }
    for (tok, &id) in distinct.iter().zip(&free) {
        id_assignment.insert(tok.clone(), id);
    }

    Ok(MergePlan { mutual, distinct, id_assignment, pretrained_capacity: capacity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn vocab(pairs: &[(&str, u32)]) -> Vocabulary {
        Vocabulary::new(pairs.iter().map(|(t, i)| (t.to_string(), *i)).collect(), Vec::new(), &[]).unwrap()
    }

    #[test]
    fn three_token_example() {
        let pre = vocab(&[("a", 0), ("b", 1), ("c", 2)]);
        let dom = vocab(&[("b", 0), ("c", 1), ("d", 2)]);
        let plan = compute_merge_plan(&pre, &dom).unwrap();
        assert_eq!(plan.mutual, ["b", "c"]);
        assert_eq!(plan.distinct, ["d"]);
        assert_eq!(plan.id_assignment["b"], 1);
        assert_eq!(plan.id_assignment["c"], 2);
        assert_eq!(plan.id_assignment["d"], 0);
        assert_eq!(plan.pretrained_capacity, 3);
        plan.validate(&pre, &dom).unwrap();
    }

    #[test]
    fn identity_plan() {
        let pre = vocab(&[("a", 0), ("b", 1), ("c", 2)]);
        let plan = compute_merge_plan(&pre, &pre).unwrap();
        assert!(plan.distinct.is_empty());
        assert_eq!(&plan.id_assignment, pre.token_to_id());
    }

    #[test]
    fn errors() {
        let pre = vocab(&[("a", 0)]);
        let dom = vocab(&[("b", 0), ("c", 1)]);
        assert_eq!(compute_merge_plan(&pre, &dom), Err(Error::DomainTooLarge { domain: 2, capacity: 1 }));
        // a sparse pretrained vocabulary leaves holes, which count as free ids
        let pre = vocab(&[("a", 0), ("b", 2)]);
        let dom = vocab(&[("x", 0), ("y", 1)]);
        let plan = compute_merge_plan(&pre, &dom).unwrap();
        assert_eq!(plan.distinct_ids().collect::<Vec<_>>(), [0, 1]);
        let spaced = vocab(&[(" a", 0)]);
        assert!(matches!(compute_merge_plan(&pre, &spaced), Err(Error::Convention(_))));
    }

    #[test]
    fn specials_must_exist_in_pretrained() {
        let pre = vocab(&[("a", 0), ("b", 1)]);
        let dom = Vocabulary::new(
            [("<s>".to_string(), 0), ("a".to_string(), 1)].into_iter().collect(),
            Vec::new(),
            &["<s>"],
        )
        .unwrap();
        assert_eq!(compute_merge_plan(&pre, &dom), Err(Error::MissingSpecial("<s>".into())));
    }
}
