use core::fmt;

use serde::{Deserialize, Serialize};

/// The fixed set of toolbox categories. Serialized as the display label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "adverse events, risks, safety")]
    AdverseEvents,
    #[serde(rename = "addiction and abuse")]
    AddictionAbuse,
    #[serde(rename = "drug usage in patient populations")]
    PatientPopulations,
    #[serde(rename = "drug administration and handling")]
    Administration,
    #[serde(rename = "pharmacology")]
    Pharmacology,
    #[serde(rename = "drug use, mechanism, composition")]
    Mechanism,
    #[serde(rename = "ID and labeling tools")]
    IdLabeling,
    #[serde(rename = "general clinical annotations")]
    ClinicalAnnotations,
    #[serde(rename = "clinical laboratory info")]
    ClinicalLaboratory,
    #[serde(rename = "general info for patients and relatives")]
    PatientInfo,
    #[serde(rename = "disease, phenotype, target, drug links")]
    AssociationLinks,
    #[serde(rename = "biological annotation tools")]
    BiologicalAnnotation,
    #[serde(rename = "publications")]
    Publications,
    #[serde(rename = "search")]
    Search,
    #[serde(rename = "target characterization")]
    TargetCharacterization,
}

impl Category {
    pub const ALL: [Category; 15] = [
        Category::AdverseEvents,
        Category::AddictionAbuse,
        Category::PatientPopulations,
        Category::Administration,
        Category::Pharmacology,
        Category::Mechanism,
        Category::IdLabeling,
        Category::ClinicalAnnotations,
        Category::ClinicalLaboratory,
        Category::PatientInfo,
        Category::AssociationLinks,
        Category::BiologicalAnnotation,
        Category::Publications,
        Category::Search,
        Category::TargetCharacterization,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::AdverseEvents => "adverse events, risks, safety",
            Category::AddictionAbuse => "addiction and abuse",
            Category::PatientPopulations => "drug usage in patient populations",
            Category::Administration => "drug administration and handling",
            Category::Pharmacology => "pharmacology",
            Category::Mechanism => "drug use, mechanism, composition",
            Category::IdLabeling => "ID and labeling tools",
            Category::ClinicalAnnotations => "general clinical annotations",
            Category::ClinicalLaboratory => "clinical laboratory info",
            Category::PatientInfo => "general info for patients and relatives",
            Category::AssociationLinks => "disease, phenotype, target, drug links",
            Category::BiologicalAnnotation => "biological annotation tools",
            Category::Publications => "publications",
            Category::Search => "search",
            Category::TargetCharacterization => "target characterization",
        }
    }

    pub fn from_label(label: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.label() == label)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}
