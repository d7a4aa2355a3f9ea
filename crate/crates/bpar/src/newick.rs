//! Newick text for dendrograms, and a reader for checking it.
//!
//! Branch lengths are parent height minus child height, so the path length
//! from the root to every leaf equals the root height.

use std::fmt;

use bpar_core::cluster::Dendrogram;

use crate::dataset::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct NewickNode {
    pub name: Option<String>,
    pub length: Option<f64>,
    pub children: Vec<NewickNode>,
}

impl NewickNode {
    /// Leaf names, left to right.
    pub fn leaves(&self) -> Vec<&str> {
        if self.children.is_empty() {
            return self.name.as_deref().into_iter().collect();
        }
        self.children.iter().flat_map(NewickNode::leaves).collect()
    }

    /// Sum of branch lengths from this node down to its first leaf.
    pub fn depth(&self) -> f64 {
        self.children.first().map_or(0.0, |c| c.length.unwrap_or(0.0) + c.depth())
    }
}

fn needs_quotes(name: &str) -> bool {
    name.is_empty() || name.chars().any(|c| "()[]':;, \t\n".contains(c))
}

impl fmt::Display for NewickNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f)?;
        f.write_str(";")
    }
}

impl NewickNode {
    fn write(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.children.is_empty() {
            f.write_str("(")?;
            for (i, c) in self.children.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                c.write(f)?;
            }
            f.write_str(")")?;
        }
        if let Some(name) = &self.name {
            if needs_quotes(name) {
                write!(f, "'{}'", name.replace('\'', "''"))?;
            } else {
                f.write_str(name)?;
            }
        }
        if let Some(len) = self.length {
            write!(f, ":{}", fmt_f64(len))?;
        }
        Ok(())
    }
}

/// Tree of `dend` rooted at its last merge.
pub fn to_tree(dend: &Dendrogram) -> NewickNode {
    let n = dend.num_leaves();
    let height = |node: usize| if node < n { 0.0 } else { dend.merges[node - n].height };
    fn build(dend: &Dendrogram, node: usize, parent: f64, height: &dyn Fn(usize) -> f64) -> NewickNode {
        let n = dend.num_leaves();
        let length = Some(parent - height(node));
        if node < n {
            return NewickNode { name: Some(dend.ids[node].clone()), length, children: Vec::new() };
        }
        let m = dend.merges[node - n];
        let h = height(node);
        NewickNode { name: None, length, children: vec![build(dend, m.a, h, height), build(dend, m.b, h, height)] }
    }
    if dend.merges.is_empty() {
        return NewickNode { name: dend.ids.first().cloned(), length: None, children: Vec::new() };
    }
    let root = 2 * n - 2;
    let mut tree = build(dend, root, height(root), &height);
    tree.length = None;
    tree
}

pub fn write_newick(dend: &Dendrogram) -> String {
    to_tree(dend).to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("newick parse error at byte {pos}: {message}")]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { pos: self.pos, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn node(&mut self) -> Result<NewickNode, ParseError> {
        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                children.push(self.node()?);
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.fail("expected `,` or `)`"),
                }
            }
        }
        let name = self.name()?;
        let length = if self.peek() == Some(b':') {
            self.pos += 1;
            Some(self.number()?)
        } else {
            None
        };
        if children.is_empty() && name.is_none() {
            return self.fail("leaf without a name");
        }
        Ok(NewickNode { name, length, children })
    }

    fn name(&mut self) -> Result<Option<String>, ParseError> {
        match self.peek() {
            Some(b'\'') => {
                self.pos += 1;
                let mut out = Vec::new();
                loop {
                    match self.text.get(self.pos) {
                        None => return self.fail("unterminated quoted name"),
                        Some(b'\'') if self.text.get(self.pos + 1) == Some(&b'\'') => {
                            out.push(b'\'');
                            self.pos += 2;
                        }
                        Some(b'\'') => {
                            self.pos += 1;
                            break;
                        }
                        Some(&c) => {
                            out.push(c);
                            self.pos += 1;
                        }
                    }
                }
                String::from_utf8(out).map(Some).or_else(|_| self.fail("name is not UTF-8"))
            }
            _ => {
                let start = self.pos;
                while self.pos < self.text.len() && !b"()[]':;, \t\n\r".contains(&self.text[self.pos]) {
                    self.pos += 1;
                }
                let raw = &self.text[start..self.pos];
                if raw.is_empty() {
                    return Ok(None);
                }
                String::from_utf8(raw.to_vec()).map(Some).or_else(|_| self.fail("name is not UTF-8"))
            }
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.text.len() && b"+-.0123456789eE".contains(&self.text[self.pos]) {
            self.pos += 1;
        }
        let raw = std::str::from_utf8(&self.text[start..self.pos]).unwrap_or("");
        raw.parse().or_else(|_| {
            self.pos = start;
            self.fail("bad branch length")
        })
    }
}

pub fn parse_newick(text: &str) -> Result<NewickNode, ParseError> {
    let mut p = Parser { text: text.as_bytes(), pos: 0 };
    let tree = p.node()?;
    if p.peek() != Some(b';') {
        return p.fail("expected `;`");
    }
    p.pos += 1;
    if p.peek().is_some() {
        return p.fail("trailing text after `;`");
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bpar_core::cluster::{Linkage, Merge};

    fn three() -> Dendrogram {
        Dendrogram {
            ids: vec!["a".into(), "b c".into(), "d'e".into()],
            merges: vec![Merge { a: 0, b: 1, height: 1.0, size: 2 }, Merge { a: 2, b: 3, height: 2.5, size: 3 }],
            linkage: Linkage::Average,
        }
    }

    #[test]
    fn writes_branch_lengths_and_quotes() {
        assert_eq!(write_newick(&three()), "('d''e':2.5,(a:1.0,'b c':1.0):1.5);");
    }

    #[test]
    fn parses_what_it_writes() {
        let text = write_newick(&three());
        let tree = parse_newick(&text).unwrap();
        assert_eq!(tree.to_string(), text);
        assert_eq!(tree.leaves(), vec!["d'e", "a", "b c"]);
        assert_eq!(tree.depth(), 2.5);
    }

    #[test]
    fn rejects_malformed_text() {
        for bad in ["(a,b)", "(a,b;", "(a,,b);", "(a:x,b);", "(a,b);junk"] {
            assert!(parse_newick(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn single_leaf() {
        let d = Dendrogram { ids: vec!["solo".into()], merges: vec![], linkage: Linkage::Single };
        assert_eq!(write_newick(&d), "solo;");
    }
}
