//! Normalized absolute paths.
//!
//! A [`VfsPath`] keeps the canonical string form together with the byte
//! offset where each component ends, so walkers can slice components without
//! re-scanning separators.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("path must be absolute: {0:?}")]
    Relative(String),
    #[error("empty component in {0:?}")]
    EmptyComponent(String),
    #[error("dot components are not supported: {0:?}")]
    DotComponent(String),
    #[error("invalid component name {0:?}")]
    InvalidName(String),
}

/// A normalized absolute path. The root is `/` with zero components.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VfsPath {
    text: String,
    /// Exclusive end offset of each component inside `text`.
    ends: Vec<u32>,
}

impl VfsPath {
    pub fn root() -> Self {
        Self {
            text: "/".to_owned(),
            ends: Vec::new(),
        }
    }

    /// Parses an absolute path. A single trailing slash is tolerated; empty,
    /// `.` and `..` components are rejected.
    pub fn parse(s: &str) -> Result<Self, PathError> {
        if !s.starts_with('/') {
            return Err(PathError::Relative(s.to_owned()));
        }
        if s == "/" {
            return Ok(Self::root());
        }
        let body = s.strip_suffix('/').unwrap_or(s);
        let mut ends = Vec::new();
        let mut pos = 0usize;
        for comp in body[1..].split('/') {
            pos += 1 + comp.len();
            match comp {
                "" => return Err(PathError::EmptyComponent(s.to_owned())),
                "." | ".." => return Err(PathError::DotComponent(s.to_owned())),
                _ => ends.push(pos as u32),
            }
        }
        Ok(Self {
            text: body.to_owned(),
            ends,
        })
    }

    pub fn from_components<'a, I>(comps: I) -> Result<Self, PathError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut path = Self::root();
        for c in comps {
            path = path.join(c)?;
        }
        Ok(path)
    }

    pub fn join(&self, name: &str) -> Result<Self, PathError> {
        validate_name(name)?;
        let mut text = if self.is_root() {
            String::with_capacity(1 + name.len())
        } else {
            self.text.clone()
        };
        text.push('/');
        text.push_str(name);
        let mut ends = self.ends.clone();
        ends.push(text.len() as u32);
        Ok(Self { text, ends })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn is_root(&self) -> bool {
        self.ends.is_empty()
    }

    /// Number of named components; the root contributes none.
    pub fn depth(&self) -> usize {
        self.ends.len()
    }

    /// Component at 0-based index `i`.
    pub fn component(&self, i: usize) -> &str {
        let end = self.ends[i] as usize;
        let start = if i == 0 { 1 } else { self.ends[i - 1] as usize + 1 };
        &self.text[start..end]
    }

    pub fn components(&self) -> impl Iterator<Item = &str> + '_ {
        (0..self.depth()).map(move |i| self.component(i))
    }

    /// Byte offset where component `i` (0-based) ends.
    pub fn component_end(&self, i: usize) -> usize {
        self.ends[i] as usize
    }

    pub fn file_name(&self) -> Option<&str> {
        self.depth().checked_sub(1).map(|i| self.component(i))
    }

    pub fn parent(&self) -> Option<Self> {
        match self.depth() {
            0 => None,
            1 => Some(Self::root()),
            d => {
                let end = self.ends[d - 2] as usize;
                Some(Self {
                    text: self.text[..end].to_owned(),
                    ends: self.ends[..d - 1].to_vec(),
                })
            }
        }
    }

    /// True when `self` equals `other` or `other` lies below it, comparing
    /// whole components.
    pub fn is_prefix_of(&self, other: &VfsPath) -> bool {
        if self.is_root() {
            return true;
        }
        let n = self.text.len();
        other.text.len() >= n
            && other.text.as_bytes()[..n] == *self.text.as_bytes()
            && (other.text.len() == n || other.text.as_bytes()[n] == b'/')
    }
}

pub(crate) fn validate_name(name: &str) -> Result<(), PathError> {
    if name.is_empty() {
        return Err(PathError::EmptyComponent(name.to_owned()));
    }
    if name == "." || name == ".." {
        return Err(PathError::DotComponent(name.to_owned()));
    }
    if name.contains('/') || name.contains('\0') {
        return Err(PathError::InvalidName(name.to_owned()));
    }
    Ok(())
}

/// Number of leading whole components shared by two paths.
pub fn shared_components(a: &VfsPath, b: &VfsPath) -> usize {
    a.components()
        .zip(b.components())
        .take_while(|(x, y)| x == y)
        .count()
}

impl fmt::Display for VfsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl fmt::Debug for VfsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VfsPath({:?})", self.text)
    }
}

impl std::str::FromStr for VfsPath {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}
