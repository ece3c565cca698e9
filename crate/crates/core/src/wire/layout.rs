use serde::{Deserialize, Serialize};

use super::WireError;

/// Cortical area encoded by the letter prefix of a 10-20 label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lobe {
    PreFrontal,
    Frontal,
    Central,
    Parietal,
    Occipital,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Midline,
}

/// Ordered electrode labels; row `i` of every packet is electrode `names[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ChannelLayout {
    names: Vec<String>,
}

/// Ultracortex 16-channel default order.
pub const DEFAULT_CHANNELS: [&str; 16] = [
    "Fp1", "Fp2", "C3", "C4", "P7", "P8", "O1", "O2", "F7", "F8", "F3", "F4", "T7", "T8", "P3",
    "P4",
];

impl Default for ChannelLayout {
    fn default() -> Self {
        ChannelLayout {
            names: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TryFrom<Vec<String>> for ChannelLayout {
    type Error = WireError;
    fn try_from(names: Vec<String>) -> Result<Self, WireError> {
        ChannelLayout::new(names)
    }
}

impl From<ChannelLayout> for Vec<String> {
    fn from(l: ChannelLayout) -> Self {
        l.names
    }
}

impl ChannelLayout {
    pub fn new(names: Vec<String>) -> Result<Self, WireError> {
        if names.is_empty() {
            return Err(WireError::Layout("layout has no channels".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(WireError::Layout(format!("duplicate channel {n}")));
            }
        }
        Ok(ChannelLayout { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.names.iter().position(|n| n == label)
    }

    /// Lobe and hemisphere of a label per the 10-20 naming scheme.
    pub fn position(label: &str) -> Option<(Lobe, Side)> {
        let (lobe, rest) = if let Some(r) = label.strip_prefix("Fp") {
            (Lobe::PreFrontal, r)
        } else {
            let mut chars = label.chars();
            let lobe = match chars.next()? {
                'F' => Lobe::Frontal,
                'C' => Lobe::Central,
                'P' => Lobe::Parietal,
                'O' => Lobe::Occipital,
                'T' => Lobe::Temporal,
                _ => return None,
            };
            (lobe, chars.as_str())
        };
        let side = if rest.eq_ignore_ascii_case("z") {
            Side::Midline
        } else {
            let n: u32 = rest.parse().ok()?;
            if n % 2 == 1 {
                Side::Left
            } else {
                Side::Right
            }
        };
        Some((lobe, side))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_order() {
        let l = ChannelLayout::default();
        assert_eq!(l.len(), 16);
        assert_eq!(l.index_of("F3"), Some(10));
        assert_eq!(l.index_of("Fp1"), Some(0));
        assert_eq!(l.index_of("Cz"), None);
    }

    #[test]
    fn positions() {
        assert_eq!(ChannelLayout::position("Fp2"), Some((Lobe::PreFrontal, Side::Right)));
        assert_eq!(ChannelLayout::position("O1"), Some((Lobe::Occipital, Side::Left)));
        assert_eq!(ChannelLayout::position("Cz"), Some((Lobe::Central, Side::Midline)));
        assert_eq!(ChannelLayout::position("X9"), None);
    }

    #[test]
    fn rejects_duplicates() {
        assert!(ChannelLayout::new(vec!["O1".into(), "O1".into()]).is_err());
        assert!(ChannelLayout::new(vec![]).is_err());
    }
}
