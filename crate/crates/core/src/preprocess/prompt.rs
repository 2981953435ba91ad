use std::fmt;
use std::str::FromStr;

use super::PreprocessError;

const PROMPT_DIRECTIVE: &str = "%%prompt ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Period {
    Baroque,
    Classical,
    Romantic,
}

impl Period {
    pub const ALL: [Period; 3] = [Period::Baroque, Period::Classical, Period::Romantic];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Instrumentation {
    Keyboard,
    Chamber,
    Orchestral,
    ArtSong,
    Choral,
    VocalOrchestral,
}

impl Instrumentation {
    pub const ALL: [Instrumentation; 6] = [
        Instrumentation::Keyboard,
        Instrumentation::Chamber,
        Instrumentation::Orchestral,
        Instrumentation::ArtSong,
        Instrumentation::Choral,
        Instrumentation::VocalOrchestral,
    ];
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Period::Baroque => "Baroque",
            Period::Classical => "Classical",
            Period::Romantic => "Romantic",
        })
    }
}

impl FromStr for Period {
    type Err = PreprocessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Period::ALL
            .into_iter()
            .find(|p| p.to_string() == s.trim())
            .ok_or_else(|| PreprocessError::BadPrompt(format!("unknown period {s:?}")))
    }
}

impl fmt::Display for Instrumentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Instrumentation::Keyboard => "Keyboard",
            Instrumentation::Chamber => "Chamber",
            Instrumentation::Orchestral => "Orchestral",
            Instrumentation::ArtSong => "Art Song",
            Instrumentation::Choral => "Choral",
            Instrumentation::VocalOrchestral => "Vocal-Orchestral",
        })
    }
}

impl FromStr for Instrumentation {
    type Err = PreprocessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Instrumentation::ALL
            .into_iter()
            .find(|p| p.to_string() == s.trim())
            .ok_or_else(|| PreprocessError::BadPrompt(format!("unknown instrumentation {s:?}")))
    }
}

/// Conditioning label. Instrumentation is absent for two-field (period-composer) prompts.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prompt {
    pub period: Period,
    pub composer: String,
    pub instrumentation: Option<Instrumentation>,
}

impl Prompt {
    pub fn new(period: Period, composer: &str, instrumentation: Instrumentation) -> Self {
        Prompt {
            period,
            composer: composer.to_string(),
            instrumentation: Some(instrumentation),
        }
    }

    /// The `%%prompt a|b|c` line, newline-terminated.
    pub fn line(&self) -> String {
        format!("{PROMPT_DIRECTIVE}{self}\n")
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.period, self.composer)?;
        if let Some(i) = self.instrumentation {
            write!(f, "|{i}")?;
        }
        Ok(())
    }
}

impl FromStr for Prompt {
    type Err = PreprocessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim_end_matches('\n').split('|').collect();
        let (period, composer, instrumentation) = match parts.as_slice() {
            [p, c] => (p.parse()?, *c, None),
            [p, c, i] => (p.parse()?, *c, Some(i.parse()?)),
            _ => return Err(PreprocessError::BadPrompt(s.to_string())),
        };
        if composer.trim().is_empty() || composer.contains('\n') {
            return Err(PreprocessError::BadPrompt(s.to_string()));
        }
        Ok(Prompt {
            period,
            composer: composer.to_string(),
            instrumentation,
        })
    }
}

pub fn prepend_prompt(text: &str, prompt: &Prompt) -> String {
    let mut out = prompt.line();
    out.push_str(text);
    out
}

/// Splits off a leading prompt line, returning it (if any) and the remaining text.
pub fn strip_prompt(text: &str) -> Result<(Option<Prompt>, &str), PreprocessError> {
    match text.strip_prefix(PROMPT_DIRECTIVE) {
        Some(rest) => {
            let end = rest.find('\n').map(|i| i + 1).unwrap_or(rest.len());
            let prompt = rest[..end].trim_end_matches('\n').parse()?;
            Ok((Some(prompt), &rest[end..]))
        }
        None => Ok((None, text)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_field_prompt_line() {
        let p = Prompt::new(Period::Baroque, "Bach, Johann Sebastian", Instrumentation::Keyboard);
        let text = "X:1\nK:C\n";
        let out = prepend_prompt(text, &p);
        assert_eq!(
            out,
            "%%prompt Baroque|Bach, Johann Sebastian|Keyboard\nX:1\nK:C\n"
        );
        let (back, rest) = strip_prompt(&out).unwrap();
        assert_eq!(back, Some(p));
        assert_eq!(rest, text);
    }

    #[test]
    fn two_field_prompt() {
        let p: Prompt = "Classical|Haydn, Joseph".parse().unwrap();
        assert_eq!(p.instrumentation, None);
        assert_eq!(p.line(), "%%prompt Classical|Haydn, Joseph\n");
    }

    #[test]
    fn closed_label_sets() {
        assert!("Modern|X|Keyboard".parse::<Prompt>().is_err());
        assert!("Romantic|X|Banjo".parse::<Prompt>().is_err());
        let p: Prompt = "Romantic|Schubert, Franz|Art Song".parse().unwrap();
        assert_eq!(p.instrumentation, Some(Instrumentation::ArtSong));
        let p: Prompt = "Baroque|Handel, George Frideric|Vocal-Orchestral".parse().unwrap();
        assert_eq!(p.to_string(), "Baroque|Handel, George Frideric|Vocal-Orchestral");
    }

    #[test]
    fn no_prompt_passthrough() {
        assert_eq!(strip_prompt("X:1\n").unwrap(), (None, "X:1\n"));
    }
}
