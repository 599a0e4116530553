//! Training configuration and model variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DgektError, Result};

/// Model variants: the full dual graph ensemble and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Full model: hypergraph branch, directed transition branch, gated
    /// teacher with mutual distillation.
    #[serde(rename = "DGEKT")]
    Dgekt,
    /// Replaces the hypergraph with its clique expansion.
    #[serde(rename = "CAG")]
    Cag,
    /// Replaces the directed transition graph with its symmetrized form.
    #[serde(rename = "TG")]
    Tg,
    /// Drops the concept branch; the transition branch trains alone.
    #[serde(rename = "RmCAHG")]
    RmCahg,
    /// Drops the transition branch; the concept branch trains alone.
    #[serde(rename = "RmDTG")]
    RmDtg,
    /// Keeps both branches but removes the distillation ensemble; their
    /// states feed one joint readout.
    #[serde(rename = "RmOKD")]
    RmOkd,
}

pub const ALL_VARIANTS: [Variant; 6] = [
    Variant::Dgekt,
    Variant::Cag,
    Variant::Tg,
    Variant::RmCahg,
    Variant::RmDtg,
    Variant::RmOkd,
];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Dgekt => "DGEKT",
            Variant::Cag => "CAG",
            Variant::Tg => "TG",
            Variant::RmCahg => "RmCAHG",
            Variant::RmDtg => "RmDTG",
            Variant::RmOkd => "RmOKD",
        }
    }

    pub fn wiring(self) -> Wiring {
        use EncoderKind::*;
        match self {
            Variant::Dgekt => Wiring {
                concept_branch: Some(Hypergraph),
                transition_branch: Some(DirectedTransition),
                teacher: true,
                fused_concat_readout: false,
            },
            Variant::Cag => Wiring {
                concept_branch: Some(ConceptClique),
                transition_branch: Some(DirectedTransition),
                teacher: true,
                fused_concat_readout: false,
            },
            Variant::Tg => Wiring {
                concept_branch: Some(Hypergraph),
                transition_branch: Some(UndirectedTransition),
                teacher: true,
                fused_concat_readout: false,
            },
            Variant::RmCahg => Wiring {
                concept_branch: None,
                transition_branch: Some(DirectedTransition),
                teacher: false,
                fused_concat_readout: false,
            },
            Variant::RmDtg => Wiring {
                concept_branch: Some(Hypergraph),
                transition_branch: None,
                teacher: false,
                fused_concat_readout: false,
            },
            Variant::RmOkd => Wiring {
                concept_branch: Some(Hypergraph),
                transition_branch: Some(DirectedTransition),
                teacher: false,
                fused_concat_readout: true,
            },
        }
    }
}

impl FromStr for Variant {
    type Err = DgektError;

    fn from_str(s: &str) -> Result<Variant> {
        ALL_VARIANTS
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                DgektError::Config(format!(
                    "unknown variant {s:?}; expected one of DGEKT, CAG, TG, RmCAHG, RmDTG, RmOKD"
                ))
            })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Graph convolution flavor an encoder branch runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Hypergraph,
    ConceptClique,
    DirectedTransition,
    UndirectedTransition,
}

/// Which components a variant instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wiring {
    pub concept_branch: Option<EncoderKind>,
    pub transition_branch: Option<EncoderKind>,
    /// Gated ensemble readout trained with mutual distillation.
    pub teacher: bool,
    /// Single readout over the concatenated branch states.
    pub fused_concat_readout: bool,
}

impl Wiring {
    pub fn branch_count(&self) -> usize {
        usize::from(self.concept_branch.is_some()) + usize::from(self.transition_branch.is_some())
    }
}

/// Everything a training run depends on. Serialized form mirrors the
/// fields one to one; omitted fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Graph embedding width per branch.
    pub embedding_dim: usize,
    pub graph_layers: usize,
    pub gru_hidden: usize,
    /// Softening temperature for distillation targets.
    pub gamma: f64,
    /// Weight of the distillation term in the total loss.
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a validation AUC improvement before stopping;
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
    pub max_seq_len: usize,
    /// Student fraction for train plus validation; the rest is test.
    pub train_frac: f64,
    /// Fraction of the training students held out for validation.
    pub val_frac_of_train: f64,
    pub seed: u64,
    /// Give each branch its own embedding table instead of sharing one.
    pub separate_embedding_tables: bool,
    /// Run both branches through a single GRU.
    pub share_gru: bool,
    /// Exclude the ensemble logits from the distillation gradient.
    pub stop_teacher_gradient: bool,
    /// Apply the distillation term only at the final prediction step.
    pub distill_last_step_only: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            variant: Variant::Dgekt,
            embedding_dim: 256,
            graph_layers: 2,
            gru_hidden: 128,
            gamma: 0.5,
            lambda: 0.01,
            batch_size: 128,
            learning_rate: 1e-3,
            max_epochs: 600,
            early_stop_patience: 20,
            max_seq_len: 50,
            train_frac: 0.8,
            val_frac_of_train: 0.1,
            seed: 0,
            separate_embedding_tables: false,
            share_gru: false,
            stop_teacher_gradient: false,
            distill_last_step_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(DgektError::Config(format!("{name} must be positive")));
            }
            Ok(())
        }
        positive("embedding_dim", self.embedding_dim)?;
        positive("graph_layers", self.graph_layers)?;
        positive("gru_hidden", self.gru_hidden)?;
        positive("batch_size", self.batch_size)?;
        positive("max_epochs", self.max_epochs)?;
        if self.max_seq_len < 2 {
            return Err(DgektError::Config(format!(
                "max_seq_len must be at least 2, got {}",
                self.max_seq_len
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(DgektError::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DgektError::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DgektError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(DgektError::Config(format!(
                "train_frac must be in (0, 1), got {}",
                self.train_frac
            )));
        }
        if !(0.0..1.0).contains(&self.val_frac_of_train) {
            return Err(DgektError::Config(format!(
                "val_frac_of_train must be in [0, 1), got {}",
                self.val_frac_of_train
            )));
        }
        Ok(())
    }

    /// Width of a knowledge state row: hidden state plus the correct and
    /// incorrect embeddings of the queried exercise.
    pub fn state_width(&self) -> usize {
        self.gru_hidden + 2 * self.embedding_dim
    }
}
