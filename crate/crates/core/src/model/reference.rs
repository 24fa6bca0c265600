use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Path to a data attribute, `LD/LN.DO.DA`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectReference {
    ld: String,
    ln: String,
    data_object: String,
    attribute: String,
}

impl ObjectReference {
    pub fn new(ld: &str, ln: &str, data_object: &str, attribute: &str) -> Result<Self, ModelError> {
        let parts = [ld, ln, data_object, attribute];
        if parts.iter().any(|p| !valid_segment(p)) {
            return Err(ModelError::NotFound(format!(
                "{ld}/{ln}.{data_object}.{attribute}"
            )));
        }
        Ok(Self {
            ld: ld.to_owned(),
            ln: ln.to_owned(),
            data_object: data_object.to_owned(),
            attribute: attribute.to_owned(),
        })
    }

    pub fn ld(&self) -> &str {
        &self.ld
    }

    pub fn ln(&self) -> &str {
        &self.ln
    }

    pub fn data_object(&self) -> &str {
        &self.data_object
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    /// True when the textual path starts with `prefix`.
    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.to_string().starts_with(prefix)
    }
}

fn valid_segment(s: &str) -> bool {
    !s.is_empty() && !s.contains(['/', '.']) && !s.chars().any(char::is_whitespace)
}

impl FromStr for ObjectReference {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let not_found = || ModelError::NotFound(s.to_owned());
        let (ld, rest) = s.split_once('/').ok_or_else(not_found)?;
        let mut it = rest.split('.');
        let (Some(ln), Some(dobj), Some(da), None) = (it.next(), it.next(), it.next(), it.next())
        else {
            return Err(not_found());
        };
        Self::new(ld, ln, dobj, da).map_err(|_| not_found())
    }
}

impl fmt::Display for ObjectReference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}.{}.{}",
            self.ld, self.ln, self.data_object, self.attribute
        )
    }
}

impl TryFrom<String> for ObjectReference {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ObjectReference> for String {
    fn from(value: ObjectReference) -> Self {
        value.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_four_segments() {
        let r: ObjectReference = "PV1/MMXU1.TotW.mag".parse().unwrap();
        assert_eq!(r.ld(), "PV1");
        assert_eq!(r.ln(), "MMXU1");
        assert_eq!(r.data_object(), "TotW");
        assert_eq!(r.attribute(), "mag");
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "",
            "PV1",
            "PV1/MMXU1",
            "PV1/MMXU1.TotW",
            "PV1/MMXU1.TotW.mag.x",
            "/MMXU1.TotW.mag",
            "PV1/.TotW.mag",
            "PV1/MMXU1..mag",
            "PV1/MMXU1.TotW.",
            "A/B/C.D.E",
        ] {
            assert!(bad.parse::<ObjectReference>().is_err(), "{bad:?}");
        }
    }

    proptest! {
        #[test]
        fn text_roundtrip(ld in "[A-Za-z0-9_-]{1,8}", ln in "[A-Z0-9]{1,8}",
                          d in "[A-Za-z0-9]{1,8}", a in "[A-Za-z0-9]{1,8}") {
            let text = format!("{ld}/{ln}.{d}.{a}");
            let r: ObjectReference = text.parse().unwrap();
            prop_assert_eq!(r.to_string(), text);
        }
    }
}
