use std::ops::Range;

/// Token families in id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    EventType,
    Time1,
    Time2,
    Track,
    Channel,
    Pitch,
    Velocity,
    Duration,
    Program,
    Controller,
    ControllerValue,
    Bpm,
    Numerator,
    Denominator,
    KeyAccidentals,
    Mode,
    Pad,
    Period,
    Composer,
}

impl Family {
    pub const BASE: [Family; 17] = [
        Family::EventType,
        Family::Time1,
        Family::Time2,
        Family::Track,
        Family::Channel,
        Family::Pitch,
        Family::Velocity,
        Family::Duration,
        Family::Program,
        Family::Controller,
        Family::ControllerValue,
        Family::Bpm,
        Family::Numerator,
        Family::Denominator,
        Family::KeyAccidentals,
        Family::Mode,
        Family::Pad,
    ];

    pub fn size(self) -> u32 {
        match self {
            Family::EventType => 8,
            Family::Time1 => 128,
            Family::Time2 => 16,
            Family::Track => 128,
            Family::Channel => 16,
            Family::Pitch | Family::Velocity | Family::Program => 128,
            Family::Duration => 2048,
            Family::Controller | Family::ControllerValue => 128,
            Family::Bpm => 384,
            Family::Numerator => 16,
            Family::Denominator => 4,
            Family::KeyAccidentals => 15,
            Family::Mode => 2,
            Family::Pad => 1,
            Family::Period => 3,
            Family::Composer => 36,
        }
    }
}

pub const BASE_VOCAB_SIZE: u32 = 3406;
pub const EXTENDED_VOCAB_SIZE: u32 = BASE_VOCAB_SIZE + 3 + 36;

/// Contiguous id ranges per family.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub families: Vec<(Family, Range<u32>)>,
}

impl Vocab {
    fn build(list: &[Family]) -> Self {
        let mut next = 0;
        let families = list
            .iter()
            .map(|&f| {
                let r = next..next + f.size();
                next = r.end;
                (f, r)
            })
            .collect();
        Vocab { families }
    }

    pub fn standard() -> Self {
        Self::build(&Family::BASE)
    }

    /// Standard vocabulary plus period and composer prompt ids.
    pub fn extended() -> Self {
        let mut list = Family::BASE.to_vec();
        list.extend([Family::Period, Family::Composer]);
        Self::build(&list)
    }

    pub fn size(&self) -> u32 {
        self.families.last().map_or(0, |(_, r)| r.end)
    }

    pub fn range(&self, f: Family) -> Option<Range<u32>> {
        self.families.iter().find(|(g, _)| *g == f).map(|(_, r)| r.clone())
    }

    pub fn family_of(&self, id: u32) -> Option<Family> {
        self.families.iter().find(|(_, r)| r.contains(&id)).map(|(f, _)| *f)
    }
}

/// Offsets into [`Vocab::extended`], which extends the standard layout.
pub(crate) fn base(f: Family) -> u32 {
    let mut at = 0;
    for g in Family::BASE.iter().chain(&[Family::Period, Family::Composer]) {
        if *g == f {
            return at;
        }
        at += g.size();
    }
    unreachable!()
}
