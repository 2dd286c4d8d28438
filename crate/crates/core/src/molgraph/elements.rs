//! Bundled periodic table: symbols, atomic numbers and standard atomic masses.

use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

const ELEMENTS_TSV: &str = include_str!("../../data/elements.tsv");

/// Mass of one hydrogen atom used for implicit and explicit hydrogens.
pub const HYDROGEN_MASS: f64 = 1.008;

struct ElementRecord {
    symbol: String,
    mass: f64,
}

struct PeriodicTable {
    records: Vec<ElementRecord>,
    by_symbol: HashMap<String, u8>,
}

static TABLE: LazyLock<PeriodicTable> = LazyLock::new(|| {
    let mut records = Vec::new();
    let mut by_symbol = HashMap::new();
    for line in ELEMENTS_TSV.lines().filter(|l| !l.trim().is_empty()) {
        let mut fields = line.split('\t');
        let symbol = fields.next().expect("symbol column").to_string();
        let number: u8 = fields.next().and_then(|f| f.parse().ok()).expect("atomic number column");
        let mass: f64 = fields.next().and_then(|f| f.parse().ok()).expect("mass column");
        assert_eq!(number as usize, records.len() + 1, "elements.tsv must be ordered");
        by_symbol.insert(symbol.clone(), number);
        records.push(ElementRecord { symbol, mass });
    }
    PeriodicTable { records, by_symbol }
});

/// A chemical element, identified by atomic number (1..=98).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub const H: Element = Element(1);
    pub const B: Element = Element(5);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);
    pub const NA: Element = Element(11);
    pub const P: Element = Element(15);
    pub const S: Element = Element(16);
    pub const CL: Element = Element(17);
    pub const AS: Element = Element(33);
    pub const SE: Element = Element(34);
    pub const BR: Element = Element(35);
    pub const I: Element = Element(53);

    pub fn from_number(z: u8) -> Option<Element> {
        (1..=count() as u8).contains(&z).then_some(Element(z))
    }

    /// Looks up a capitalized element symbol ("C", "Cl", "Na").
    pub fn from_symbol(symbol: &str) -> Option<Element> {
        TABLE.by_symbol.get(symbol).map(|&z| Element(z))
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        &TABLE.records[self.0 as usize - 1].symbol
    }

    /// Standard atomic weight in unified atomic mass units.
    pub fn mass(self) -> f64 {
        TABLE.records[self.0 as usize - 1].mass
    }

    /// Elements that may be written in lowercase (aromatic) form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S | Element::SE | Element::AS
        )
    }

    pub fn all() -> impl Iterator<Item = Element> {
        (1..=count() as u8).map(Element)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Number of elements in the bundled table.
pub fn count() -> usize {
    TABLE.records.len()
}

/// Exact masses of common isotopes; unknown isotopes fall back to the mass number.
pub fn isotope_mass(element: Element, mass_number: u16) -> f64 {
    const ISOTOPES: &[(u8, u16, f64)] = &[
        (1, 1, 1.008),
        (1, 2, 2.014),
        (1, 3, 3.016),
        (6, 11, 11.011),
        (6, 12, 12.000),
        (6, 13, 13.003),
        (6, 14, 14.003),
        (7, 13, 13.006),
        (7, 14, 14.003),
        (7, 15, 15.000),
        (8, 15, 15.003),
        (8, 16, 15.995),
        (8, 17, 16.999),
        (8, 18, 17.999),
        (9, 18, 18.001),
        (9, 19, 18.998),
        (15, 31, 30.974),
        (15, 32, 31.974),
        (16, 32, 31.972),
        (16, 34, 33.968),
        (16, 35, 34.969),
        (17, 35, 34.969),
        (17, 37, 36.966),
        (35, 79, 78.918),
        (35, 81, 80.916),
        (53, 123, 122.906),
        (53, 125, 124.905),
        (53, 127, 126.904),
        (53, 131, 130.906),
    ];
    ISOTOPES
        .iter()
        .find(|(z, a, _)| *z == element.0 && *a == mass_number)
        .map(|(_, _, m)| *m)
        .unwrap_or(mass_number as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_98_elements() {
        assert_eq!(count(), 98);
        assert_eq!(Element::from_symbol("Cf").unwrap().atomic_number(), 98);
        assert!(Element::from_number(99).is_none());
        assert!(Element::from_symbol("c").is_none());
    }

    #[test]
    fn masses() {
        assert_eq!(Element::C.mass(), 12.011);
        assert_eq!(Element::from_symbol("Cl"), Some(Element::CL));
        assert!((isotope_mass(Element::C, 13) - 13.003).abs() < 1e-9);
        assert_eq!(isotope_mass(Element::C, 15), 15.0);
    }
}
