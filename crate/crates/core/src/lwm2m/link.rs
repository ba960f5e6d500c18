//! CoRE link format subset: `<uri>;attr;attr=value`, comma separated.

use std::fmt;

use thiserror::Error;

use crate::object_model::{parse_path, ResourcePath};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub target: String,
    pub attrs: Vec<(String, Option<String>)>,
}

impl Link {
    pub fn new(target: impl Into<String>) -> Self {
        Link {
            target: target.into(),
            attrs: Vec::new(),
        }
    }

    pub fn attr(mut self, name: &str, value: Option<&str>) -> Self {
        self.attrs.push((name.to_string(), value.map(str::to_string)));
        self
    }

    pub fn get(&self, name: &str) -> Option<Option<&str>> {
        self.attrs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_deref())
    }

    pub fn path(&self) -> Option<ResourcePath> {
        parse_path(&self.target).ok()
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.target)?;
        for (name, value) in &self.attrs {
            match value {
                None => write!(f, ";{name}")?,
                Some(v) if v.parse::<f64>().is_ok() => write!(f, ";{name}={v}")?,
                Some(v) => write!(f, ";{name}=\"{v}\"")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed link format at byte {0}")]
pub struct LinkError(pub usize);

pub fn render_links(links: &[Link]) -> String {
    links.iter().map(Link::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_links(text: &str) -> Result<Vec<Link>, LinkError> {
    let b = text.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    let skip_ws = |i: &mut usize| {
        while *i < b.len() && b[*i].is_ascii_whitespace() {
            *i += 1;
        }
    };
    skip_ws(&mut i);
    if i == b.len() {
        return Ok(out);
    }
    loop {
        skip_ws(&mut i);
        if b.get(i) != Some(&b'<') {
            return Err(LinkError(i));
        }
        let end = text[i..].find('>').ok_or(LinkError(i))? + i;
        let mut link = Link::new(&text[i + 1..end]);
        i = end + 1;
        while b.get(i) == Some(&b';') {
            i += 1;
            let start = i;
            while i < b.len() && !matches!(b[i], b'=' | b';' | b',') {
                i += 1;
            }
            let name = text[start..i].trim().to_string();
            if name.is_empty() {
                return Err(LinkError(start));
            }
            let value = if b.get(i) == Some(&b'=') {
                i += 1;
                if b.get(i) == Some(&b'"') {
                    let close = text[i + 1..].find('"').ok_or(LinkError(i))? + i + 1;
                    let v = text[i + 1..close].to_string();
                    i = close + 1;
                    Some(v)
                } else {
                    let start = i;
                    while i < b.len() && !matches!(b[i], b';' | b',') {
                        i += 1;
                    }
                    Some(text[start..i].trim().to_string())
                }
            } else {
                None
            };
            link.attrs.push((name, value));
        }
        out.push(link);
        skip_ws(&mut i);
        match b.get(i) {
            None => return Ok(out),
            Some(b',') => i += 1,
            Some(_) => return Err(LinkError(i)),
        }
    }
}

/// Registration payload: one link per object instance.
pub fn instance_links(instances: &[(u16, u16)]) -> String {
    render_links(
        &instances
            .iter()
            .map(|(o, i)| Link::new(format!("/{o}/{i}")))
            .collect::<Vec<_>>(),
    )
}

/// (object, instance) pairs named by a registration payload.
pub fn parse_instance_links(text: &str) -> Result<Vec<(u16, u16)>, LinkError> {
    Ok(parse_links(text)?
        .iter()
        .filter_map(|l| l.path())
        .filter_map(|p| p.instance_id.map(|i| (p.object_id, i)))
        .collect())
}
