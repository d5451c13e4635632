use serde::{Deserialize, Serialize};

use crate::builder::EntryTags;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accepted,
    Alert,
    Denied,
}

impl Decision {
    pub fn name(self) -> &'static str {
        match self {
            Decision::Accepted => "accepted",
            Decision::Alert => "alert",
            Decision::Denied => "denied",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Decision::Accepted => 0,
            Decision::Alert => 1,
            Decision::Denied => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Decision::Accepted),
            1 => Some(Decision::Alert),
            2 => Some(Decision::Denied),
            _ => None,
        }
    }
}

/// What one matched entry contributes to the decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchEffect {
    /// Common sequence; never alerts or denies.
    Ignored,
    /// Regulated-but-pass, or a hazard not regulated in the requester's region.
    Alert,
    /// Would deny, but is covered by a presented exemption token.
    Exempted,
    Deny,
}

/// A hazard entry applies in `region` if its region set names the region
/// or the wildcard `*`.
pub fn region_applies(tags: &EntryTags, region: &str) -> bool {
    tags.regions.contains(region) || tags.regions.contains("*")
}

pub fn match_effect(tags: &EntryTags, region: &str, exempted: bool) -> MatchEffect {
    if tags.regulated_but_pass {
        MatchEffect::Alert
    } else if tags.common {
        MatchEffect::Ignored
    } else if exempted {
        MatchEffect::Exempted
    } else if region_applies(tags, region) {
        MatchEffect::Deny
    } else {
        MatchEffect::Alert
    }
}

/// Any deny wins; otherwise any alert or exemption gives "alert".
pub fn verdict_rule(effects: impl IntoIterator<Item = MatchEffect>) -> Decision {
    let mut decision = Decision::Accepted;
    for e in effects {
        match e {
            MatchEffect::Deny => return Decision::Denied,
            MatchEffect::Alert | MatchEffect::Exempted => decision = Decision::Alert,
            MatchEffect::Ignored => {}
        }
    }
    decision
}
