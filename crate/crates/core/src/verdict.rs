use std::fmt;

/// Outcome of a verifier: hard violations plus advisory warnings and notes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict<V> {
    pub violations: Vec<V>,
    pub warnings: Vec<V>,
    pub notes: Vec<String>,
}

impl<V> Default for Verdict<V> {
    fn default() -> Self {
        Verdict {
            violations: Vec::new(),
            warnings: Vec::new(),
            notes: Vec::new(),
        }
    }
}

impl<V> Verdict<V> {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn fail(&mut self, v: V) {
        self.violations.push(v);
    }

    pub fn warn(&mut self, v: V) {
        self.warnings.push(v);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Promotes warnings to violations.
    pub fn strict(mut self) -> Self {
        self.violations.append(&mut self.warnings);
        self
    }

    pub fn absorb<W: Into<V>>(&mut self, other: Verdict<W>) {
        self.violations.extend(other.violations.into_iter().map(Into::into));
        self.warnings.extend(other.warnings.into_iter().map(Into::into));
        self.notes.extend(other.notes);
    }
}

impl<V: fmt::Display> fmt::Display for Verdict<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pass() {
            writeln!(f, "PASS")?;
        } else {
            writeln!(f, "FAIL ({} violations)", self.violations.len())?;
        }
        for v in &self.violations {
            writeln!(f, "  violation: {v}")?;
        }
        for w in &self.warnings {
            writeln!(f, "  warning: {w}")?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        Ok(())
    }
}
