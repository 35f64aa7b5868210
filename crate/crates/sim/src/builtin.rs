//! Scenarios shipped with the binary.

pub const BUILTINS: &[(&str, &str)] = &[
    ("fairness", include_str!("../scenarios/fairness.scn")),
    ("dumbbell-dcqcn", include_str!("../scenarios/dumbbell-dcqcn.scn")),
    ("incast-firewall", include_str!("../scenarios/incast-firewall.scn")),
    ("hashpart", include_str!("../scenarios/hashpart.scn")),
    ("collective", include_str!("../scenarios/collective.scn")),
];

pub fn get(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|b| b.0 == name).map(|b| b.1)
}
