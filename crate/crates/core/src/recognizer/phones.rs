use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const TIMIT_TSV: &str = include_str!("../../assets/timit_phones.tsv");

/// Phone set used for training, plus the folding used for scoring.
#[derive(Debug, Clone)]
pub struct PhoneInventory {
    phones: Vec<String>,
    index: HashMap<String, usize>,
    /// Scoring class per phone; `None` means the phone is dropped before scoring.
    folded: Vec<Option<usize>>,
    classes: Vec<String>,
}

impl PhoneInventory {
    /// Parses `phone<TAB>class` lines; `#` starts a comment and class `-` deletes the phone.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut phones = Vec::new();
        let mut index = HashMap::new();
        let mut folded = Vec::new();
        let mut classes: Vec<String> = Vec::new();
        let mut class_index: HashMap<String, usize> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(phone), Some(class), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Format(format!(
                    "phone table line {}: expected two tab-separated columns",
                    lineno + 1
                )));
            };
            if index.insert(phone.to_string(), phones.len()).is_some() {
                return Err(Error::Format(format!("duplicate phone {phone}")));
            }
            phones.push(phone.to_string());
            folded.push(if class == "-" {
                None
            } else {
                let next = classes.len();
                let id = *class_index.entry(class.to_string()).or_insert(next);
                if id == next {
                    classes.push(class.to_string());
                }
                Some(id)
            });
        }
        Ok(Self {
            phones,
            index,
            folded,
            classes,
        })
    }

    /// The 61-phone TIMIT set with the standard 39-class folding.
    pub fn timit() -> &'static PhoneInventory {
        static INV: OnceLock<PhoneInventory> = OnceLock::new();
        INV.get_or_init(|| Self::from_tsv(TIMIT_TSV).expect("bundled phone table parses"))
    }

    pub fn len(&self) -> usize {
        self.phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }

    /// CTC blank sits after the last phone.
    pub fn blank(&self) -> usize {
        self.phones.len()
    }

    /// Output classes of the recognizer: phones plus blank.
    pub fn n_classes(&self) -> usize {
        self.phones.len() + 1
    }

    pub fn n_scoring_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn id(&self, phone: &str) -> Option<usize> {
        self.index.get(phone).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.phones.get(id).map(String::as_str)
    }

    pub fn fold(&self, id: usize) -> Option<usize> {
        self.folded.get(id).copied().flatten()
    }

    /// Whitespace-separated symbols → ids.
    pub fn parse(&self, transcript: &str) -> Result<Vec<usize>> {
        transcript
            .split_whitespace()
            .map(|p| {
                self.id(p)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown phone {p:?}")))
            })
            .collect()
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.symbol(i).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
