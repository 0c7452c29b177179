#![allow(dead_code)]

use std::collections::BTreeMap;

use electosim_core::{ElectionContext, Income, Persona};

pub fn teacher(id: &str) -> Persona {
    Persona {
        id: id.to_string(),
        age: 44,
        gender: "Female".into(),
        ethnicity: "White".into(),
        marital_status: "Married".into(),
        household_size: 3,
        has_children: true,
        education_level: "Bachelor's degree".into(),
        occupation: "Teacher".into(),
        individual_income: Income::Amount(52000.0),
        family_income: Income::Band("$75,000-$99,999".into()),
        residence_state: "WI".into(),
        ideology: None,
        extra: BTreeMap::new(),
    }
}

pub fn context_2020() -> ElectionContext {
    ElectionContext {
        year: 2020,
        democratic_candidate: "Joe Biden".into(),
        republican_candidate: "Donald Trump".into(),
        party_agendas: "The Democratic Party prioritizes expanding health coverage. \
                        The Republican Party prioritizes lowering taxes."
            .into(),
        candidate_bios: "Joe Biden served as vice president. Donald Trump is the incumbent president.".into(),
    }
}
