//! Attacker knowledge and derivability.
//!
//! Knowledge is kept saturated under the destructor rules (tuple and pad
//! projection, asymmetric decryption with a derivable private key). Whether
//! a term can be produced is decided on demand by [`Knowledge::can_derive`],
//! which recurses through the public constructors. The combination is the
//! standard two-phase closure; it terminates because analysis only ever adds
//! strict subterms and synthesis is structural recursion on the query.

use std::collections::HashSet;

use crate::term::{reduce, Freshness, Term};

/// Default bound on the constructor depth of synthesized terms.
pub const DEFAULT_DEPTH_BOUND: usize = 4;

/// The attacker's knowledge set.
#[derive(Debug, Clone)]
pub struct Knowledge {
    known: HashSet<Term>,
    /// Maximum constructor depth for terms the attacker may build.
    pub depth_bound: usize,
}

impl Default for Knowledge {
    fn default() -> Self {
        Knowledge::new()
    }
}

impl Knowledge {
    pub fn new() -> Self {
        Knowledge { known: HashSet::new(), depth_bound: DEFAULT_DEPTH_BOUND }
    }

    pub fn with_depth_bound(depth_bound: usize) -> Self {
        Knowledge { known: HashSet::new(), depth_bound }
    }

    /// Number of terms in the saturated set (observed plus projections).
    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Term> {
        self.known.iter()
    }

    /// Record an observed term and saturate under the destructor rules.
    pub fn observe(&mut self, t: &Term) {
        let t = reduce(t);
        if !self.known.insert(t) {
            return;
        }
        self.saturate();
    }

    fn saturate(&mut self) {
        loop {
            let mut added = Vec::new();
            for t in &self.known {
                match t {
                    Term::Tuple(items) => {
                        for it in items {
                            if !self.known.contains(it) {
                                added.push(it.clone());
                            }
                        }
                    }
                    Term::Pad { msg, .. } => {
                        if !self.known.contains(msg.as_ref()) {
                            added.push(msg.as_ref().clone());
                        }
                    }
                    Term::AEnc { msg, pubkey } => {
                        if let Term::PubKey(priv_key) = pubkey.as_ref() {
                            if self.can_derive(priv_key) && !self.known.contains(msg.as_ref()) {
                                added.push(msg.as_ref().clone());
                            }
                        }
                    }
                    _ => {}
                }
            }
            if added.is_empty() {
                return;
            }
            for t in added {
                self.known.insert(t);
            }
        }
    }

    /// Can the attacker produce `t` from the current knowledge?
    pub fn can_derive(&self, t: &Term) -> bool {
        self.derive_inner(&reduce(t), 0)
    }

    fn derive_inner(&self, t: &Term, depth: usize) -> bool {
        if self.known.contains(t) {
            return true;
        }
        if depth > self.depth_bound {
            return false;
        }
        match t {
            Term::Atom(a) => a.freshness == Freshness::Public,
            Term::Tuple(items) => items.iter().all(|it| self.derive_inner(it, depth + 1)),
            Term::PubKey(k) | Term::Hash(k) | Term::Pad { msg: k, .. } => {
                self.derive_inner(k, depth + 1)
            }
            Term::Cert { content: a, signed_by: b }
            | Term::Sign { msg: a, key: b }
            | Term::AEnc { msg: a, pubkey: b }
            | Term::Mac { msg: a, key: b }
            | Term::MacPrime { msg: a, key: b }
            | Term::Kdf { master: a, salt: b }
            | Term::Xor(a, b) => self.derive_inner(a, depth + 1) && self.derive_inner(b, depth + 1),
        }
    }
}

/// Add the observed terms to `k` and return the saturated knowledge.
pub fn close(mut k: Knowledge, observed: &[Term]) -> Knowledge {
    for t in observed {
        k.observe(t);
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::AtomGen;

    /// Brute-force closure oracle: BFS over destructor and constructor rules
    /// to a fixpoint, over a small candidate universe. Independent of the
    /// analyze/synthesize implementation above.
    fn bfs_closure_contains(observed: &[Term], goal: &Term, gen_depth: usize) -> bool {
        let mut known: HashSet<Term> = observed.iter().map(reduce).collect();
        loop {
            let mut next = known.clone();
            // destructors
            for t in &known {
                match t {
                    Term::Tuple(items) => next.extend(items.iter().cloned()),
                    Term::Pad { msg, .. } => {
                        next.insert(msg.as_ref().clone());
                    }
                    Term::AEnc { msg, pubkey } => {
                        if let Term::PubKey(k) = pubkey.as_ref() {
                            if known.contains(k.as_ref()) {
                                next.insert(msg.as_ref().clone());
                            }
                        }
                    }
                    _ => {}
                }
            }
            // constructors, bounded by the generated term depth
            let snapshot: Vec<Term> = known.iter().cloned().collect();
            for a in &snapshot {
                if a.depth() >= gen_depth {
                    continue;
                }
                next.insert(Term::hash(a.clone()));
                next.insert(Term::pubkey(a.clone()));
                for b in &snapshot {
                    if b.depth() >= gen_depth {
                        continue;
                    }
                    next.insert(Term::tuple(vec![a.clone(), b.clone()]));
                    next.insert(Term::aenc(a.clone(), b.clone()));
                    next.insert(Term::mac(a.clone(), b.clone()));
                    next.insert(reduce(&Term::xor(a.clone(), b.clone())));
                }
            }
            if next.len() == known.len() {
                return known.contains(&reduce(goal));
            }
            known = next;
        }
    }

    #[test]
    fn projection_exposes_tuple_items() {
        let k = close(Knowledge::new(), &[Term::tuple(vec![Term::atom("a"), Term::atom("b")])]);
        assert!(k.can_derive(&Term::atom("a")));
        assert!(k.can_derive(&Term::atom("b")));
    }

    #[test]
    fn ciphertext_without_key_hides_payload() {
        let gen = AtomGen::new();
        let m = gen.fresh("m");
        let key = gen.fresh("k");
        let k = close(Knowledge::new(), &[Term::aenc(m.clone(), Term::pubkey(key))]);
        assert!(!k.can_derive(&m));
    }

    #[test]
    fn ciphertext_with_key_reveals_payload() {
        let gen = AtomGen::new();
        let m = gen.fresh("m");
        let key = gen.fresh("k");
        let observed = [Term::aenc(m.clone(), Term::pubkey(key.clone())), key.clone()];
        let k = close(Knowledge::new(), &observed);
        assert!(k.can_derive(&m));
        // cross-check against the brute-force oracle
        assert!(bfs_closure_contains(&observed, &m, 2));
    }

    #[test]
    fn closure_is_idempotent() {
        let gen = AtomGen::new();
        let key = gen.fresh("k");
        let observed = [
            Term::aenc(gen.fresh("m"), Term::pubkey(key.clone())),
            key,
            Term::tuple(vec![Term::atom("a"), gen.fresh("n")]),
        ];
        let k1 = close(Knowledge::new(), &observed);
        let k2 = close(k1.clone(), &[]);
        let mut s1: Vec<String> = k1.iter().map(|t| t.to_string()).collect();
        let mut s2: Vec<String> = k2.iter().map(|t| t.to_string()).collect();
        s1.sort();
        s2.sort();
        assert_eq!(s1, s2);
    }

    #[test]
    fn no_private_key_recovery_from_uses() {
        let gen = AtomGen::new();
        let key = gen.fresh("k");
        let m = Term::atom("m");
        let observed = [
            Term::aenc(m.clone(), Term::pubkey(key.clone())),
            Term::sign(m.clone(), key.clone()),
            Term::mac(m, key.clone()),
        ];
        let k = close(Knowledge::new(), &observed);
        assert!(!k.can_derive(&key));
        assert!(!bfs_closure_contains(&observed, &key, 2));
    }

    #[test]
    fn attacker_builds_with_known_keys_only() {
        let gen = AtomGen::new();
        let known_key = gen.fresh("mine");
        let unknown_key = gen.fresh("theirs");
        let mut k = Knowledge::new();
        k.observe(&known_key);
        assert!(k.can_derive(&Term::sign(Term::atom("m"), known_key)));
        assert!(!k.can_derive(&Term::sign(Term::atom("m"), unknown_key)));
    }

    #[test]
    fn depth_bound_limits_synthesis() {
        let k = Knowledge::with_depth_bound(1);
        let deep = Term::hash(Term::hash(Term::hash(Term::atom("a"))));
        assert!(!k.can_derive(&deep));
        let k = Knowledge::with_depth_bound(6);
        assert!(k.can_derive(&deep));
    }
}
