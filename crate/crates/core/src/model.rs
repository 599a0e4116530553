//! The knowledge tracing model: branch encoders, recurrent students,
//! readouts and the ensemble gate, wired according to the configured
//! variant.
//!
//! Parameter creation consumes the seeded generator in a fixed order, so
//! a (config, vocabulary size, seed) triple always produces bit-identical
//! initial weights.

use rand_chacha::ChaCha8Rng;

use crate::config::{TrainConfig, Variant, Wiring};
use crate::data::{node_index, StudentSequence};
use crate::diff::Tensor;
use crate::distill::{distill_loss, gate_fuse, GateParameters};
use crate::encoders::{EmbeddingTable, Encoder};
use crate::error::{DgektError, Result};
use crate::graph::GraphSet;
use crate::scalar::Scalar;
use crate::sequence::{
    ce_loss, gru_forward, knowledge_state, predict_prob, GruParameters, ReadoutParameters,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub num_exercises: usize,
    pub num_nodes: usize,
    pub embedding_dim: usize,
    pub gru_hidden: usize,
    pub state_width: usize,
}

pub struct DgektModel<S: Scalar> {
    pub config: TrainConfig,
    pub wiring: Wiring,
    pub dims: ModelDims,
    embedding_primary: EmbeddingTable<S>,
    embedding_transition: Option<EmbeddingTable<S>>,
    concept_encoder: Option<Encoder<S>>,
    transition_encoder: Option<Encoder<S>>,
    gru_primary: GruParameters<S>,
    gru_transition: Option<GruParameters<S>>,
    readout_concept: Option<ReadoutParameters<S>>,
    readout_transition: Option<ReadoutParameters<S>>,
    readout_ensemble: Option<ReadoutParameters<S>>,
    readout_fused: Option<ReadoutParameters<S>>,
    gate: Option<GateParameters<S>>,
}

/// Encoded node embeddings of one branch, with per-exercise views:
/// `correct` holds the even rows, `incorrect` the odd rows.
pub struct BranchTable<S: Scalar> {
    pub nodes: Tensor<S>,
    pub correct: Tensor<S>,
    pub incorrect: Tensor<S>,
}

/// Output of running the graph encoders once; shared by every sequence in
/// a batch so the encoders participate in one backward pass per step.
pub struct EncodedTables<S: Scalar> {
    pub concept: Option<BranchTable<S>>,
    pub transition: Option<BranchTable<S>>,
}

/// Differentiable per-sequence objective plus plain numbers for epoch
/// reporting.
pub struct SequenceLoss<S: Scalar> {
    pub total: Tensor<S>,
    pub ce_concept: Option<f64>,
    pub ce_transition: Option<f64>,
    pub ce_ensemble: Option<f64>,
    pub ce_fused: Option<f64>,
    pub kd: Option<f64>,
    /// Number of scored steps (sequence length minus one).
    pub predictions: usize,
}

/// What a model actually instantiated, for ablation verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentInventory {
    pub concept_encoder: Option<crate::config::EncoderKind>,
    pub transition_encoder: Option<crate::config::EncoderKind>,
    pub embedding_tables: usize,
    pub gru_count: usize,
    pub has_concept_readout: bool,
    pub has_transition_readout: bool,
    pub has_ensemble_readout: bool,
    pub has_fused_readout: bool,
    pub has_gate: bool,
    pub parameter_count: usize,
}

impl<S: Scalar> DgektModel<S> {
    pub fn new(
        config: &TrainConfig,
        num_exercises: usize,
        graphs: &GraphSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<DgektModel<S>> {
        config.validate()?;
        if num_exercises == 0 {
            return Err(DgektError::Data("model needs at least one exercise".into()));
        }
        let wiring = config.variant.wiring();
        let dims = ModelDims {
            num_exercises,
            num_nodes: 2 * num_exercises,
            embedding_dim: config.embedding_dim,
            gru_hidden: config.gru_hidden,
            state_width: config.state_width(),
        };
        let d = config.embedding_dim;
        let k = dims.state_width;
        let both_branches = wiring.branch_count() == 2;

        let embedding_primary = EmbeddingTable::new(dims.num_nodes, d, rng);
        let embedding_transition = (config.separate_embedding_tables && both_branches)
            .then(|| EmbeddingTable::new(dims.num_nodes, d, rng));

        let concept_encoder = match wiring.concept_branch {
            Some(kind) => Some(Encoder::new(kind, graphs, d, config.graph_layers, rng)?),
            None => None,
        };
        let transition_encoder = match wiring.transition_branch {
            Some(kind) => Some(Encoder::new(kind, graphs, d, config.graph_layers, rng)?),
            None => None,
        };

        let gru_primary = GruParameters::new(d, config.gru_hidden, rng);
        let gru_transition = (both_branches && !config.share_gru)
            .then(|| GruParameters::new(d, config.gru_hidden, rng));

        let separate_readouts = !wiring.fused_concat_readout;
        let readout_concept = (separate_readouts && wiring.concept_branch.is_some())
            .then(|| ReadoutParameters::new(k, rng));
        let readout_transition = (separate_readouts && wiring.transition_branch.is_some())
            .then(|| ReadoutParameters::new(k, rng));
        let readout_ensemble = wiring.teacher.then(|| ReadoutParameters::new(k, rng));
        let readout_fused = wiring
            .fused_concat_readout
            .then(|| ReadoutParameters::new(2 * k, rng));
        let gate = wiring.teacher.then(|| GateParameters::new(k, rng));

        Ok(DgektModel {
            config: config.clone(),
            wiring,
            dims,
            embedding_primary,
            embedding_transition,
            concept_encoder,
            transition_encoder,
            gru_primary,
            gru_transition,
            readout_concept,
            readout_transition,
            readout_ensemble,
            readout_fused,
            gate,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn transition_embedding(&self) -> &EmbeddingTable<S> {
        self.embedding_transition
            .as_ref()
            .unwrap_or(&self.embedding_primary)
    }

    fn transition_gru(&self) -> &GruParameters<S> {
        self.gru_transition.as_ref().unwrap_or(&self.gru_primary)
    }

    /// Parameters with stable names, in creation order. Checkpoints and
    /// the optimizer both rely on this order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor<S>)> {
        let mut out: Vec<(String, Tensor<S>)> = Vec::new();
        out.push(("embedding.primary".into(), self.embedding_primary.weights.clone()));
        if let Some(t) = &self.embedding_transition {
            out.push(("embedding.transition".into(), t.weights.clone()));
        }
        for (branch, enc) in [
            ("concept", &self.concept_encoder),
            ("transition", &self.transition_encoder),
        ] {
            if let Some(enc) = enc {
                for (i, layer) in enc.layers.iter().enumerate() {
                    use crate::encoders::ConvLayer;
                    match layer {
                        ConvLayer::Symmetric(l) => {
                            out.push((format!("encoder.{branch}.layer{i}.weight"), l.weight.clone()));
                        }
                        ConvLayer::Directed(l) => {
                            out.push((
                                format!("encoder.{branch}.layer{i}.weight_in"),
                                l.weight_in.clone(),
                            ));
                            out.push((
                                format!("encoder.{branch}.layer{i}.weight_out"),
                                l.weight_out.clone(),
                            ));
                        }
                    }
                }
            }
        }
        let push_gru = |name: &str, g: &GruParameters<S>, out: &mut Vec<(String, Tensor<S>)>| {
            out.push((format!("gru.{name}.w_reset"), g.w_reset.clone()));
            out.push((format!("gru.{name}.w_update"), g.w_update.clone()));
            out.push((format!("gru.{name}.w_cand"), g.w_cand.clone()));
            out.push((format!("gru.{name}.b_reset"), g.b_reset.clone()));
            out.push((format!("gru.{name}.b_update"), g.b_update.clone()));
            out.push((format!("gru.{name}.b_cand"), g.b_cand.clone()));
        };
        push_gru("primary", &self.gru_primary, &mut out);
        if let Some(g) = &self.gru_transition {
            push_gru("transition", g, &mut out);
        }
        for (name, r) in [
            ("concept", &self.readout_concept),
            ("transition", &self.readout_transition),
            ("ensemble", &self.readout_ensemble),
            ("fused", &self.readout_fused),
        ] {
            if let Some(r) = r {
                out.push((format!("readout.{name}.weight"), r.weight.clone()));
                out.push((format!("readout.{name}.bias"), r.bias.clone()));
            }
        }
        if let Some(g) = &self.gate {
            out.push(("gate.weight".into(), g.weight.clone()));
            out.push(("gate.bias".into(), g.bias.clone()));
        }
        out
    }

    pub fn parameters(&self) -> Vec<Tensor<S>> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    /// Overwrites the named parameter's values. The replacement must match
    /// the existing shape exactly.
    pub fn load_parameter(&self, name: &str, data: &[S], shape: (usize, usize)) -> Result<()> {
        let tensor = self
            .named_parameters()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| {
                DgektError::Checkpoint(format!("parameter {name:?} does not exist in this model"))
            })?;
        if tensor.shape() != shape || data.len() != tensor.len() {
            return Err(DgektError::Checkpoint(format!(
                "parameter {name:?} has shape {}x{} in the checkpoint but {}x{} in the model",
                shape.0,
                shape.1,
                tensor.shape().0,
                tensor.shape().1
            )));
        }
        tensor.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn component_inventory(&self) -> ComponentInventory {
        ComponentInventory {
            concept_encoder: self.concept_encoder.as_ref().map(|e| e.kind),
            transition_encoder: self.transition_encoder.as_ref().map(|e| e.kind),
            embedding_tables: 1 + usize::from(self.embedding_transition.is_some()),
            gru_count: 1 + usize::from(self.gru_transition.is_some()),
            has_concept_readout: self.readout_concept.is_some(),
            has_transition_readout: self.readout_transition.is_some(),
            has_ensemble_readout: self.readout_ensemble.is_some(),
            has_fused_readout: self.readout_fused.is_some(),
            has_gate: self.gate.is_some(),
            parameter_count: self.named_parameters().len(),
        }
    }

    /// Runs the graph encoders once. During training call this once per
    /// optimizer step and share the result across the batch.
    pub fn encode_tables(&self) -> Result<EncodedTables<S>> {
        let concept = match &self.concept_encoder {
            Some(enc) => Some(self.branch_table(enc.encode(&self.embedding_primary.weights)?)?),
            None => None,
        };
        let transition = match &self.transition_encoder {
            Some(enc) => {
                Some(self.branch_table(enc.encode(&self.transition_embedding().weights)?)?)
            }
            None => None,
        };
        Ok(EncodedTables {
            concept,
            transition,
        })
    }

    fn branch_table(&self, nodes: Tensor<S>) -> Result<BranchTable<S>> {
        let n = self.dims.num_exercises;
        let evens: Vec<usize> = (0..n).map(|e| 2 * e).collect();
        let odds: Vec<usize> = (0..n).map(|e| 2 * e + 1).collect();
        Ok(BranchTable {
            correct: nodes.gather_rows(&evens)?,
            incorrect: nodes.gather_rows(&odds)?,
            nodes,
        })
    }

    /// Hidden states per step for each active branch.
    fn branch_states(
        &self,
        tables: &EncodedTables<S>,
        steps: &[(usize, bool)],
    ) -> Result<(Option<Vec<Tensor<S>>>, Option<Vec<Tensor<S>>>)> {
        let run = |table: &BranchTable<S>, gru: &GruParameters<S>| -> Result<Vec<Tensor<S>>> {
            let inputs = steps
                .iter()
                .map(|&(e, correct)| table.nodes.gather_rows(&[node_index(e, correct)]))
                .collect::<Result<Vec<_>>>()?;
            gru_forward(gru, &inputs)
        };
        let concept = match &tables.concept {
            Some(t) => Some(run(t, &self.gru_primary)?),
            None => None,
        };
        let transition = match &tables.transition {
            Some(t) => Some(run(t, self.transition_gru())?),
            None => None,
        };
        Ok((concept, transition))
    }

    fn check_sequence(&self, seq: &StudentSequence) -> Result<()> {
        if seq.steps.len() < 2 {
            return Err(DgektError::Data(format!(
                "sequence for student {:?} has {} steps; need at least 2",
                seq.student_id,
                seq.steps.len()
            )));
        }
        for &(e, _) in &seq.steps {
            if e >= self.dims.num_exercises {
                return Err(DgektError::Data(format!(
                    "exercise index {e} out of range for {} exercises",
                    self.dims.num_exercises
                )));
            }
        }
        Ok(())
    }

    /// Builds the training objective for one sequence. Prediction at step
    /// k is scored against the response at step k+1.
    pub fn training_loss(
        &self,
        tables: &EncodedTables<S>,
        seq: &StudentSequence,
    ) -> Result<SequenceLoss<S>> {
        self.check_sequence(seq)?;
        let steps = &seq.steps;
        let t = steps.len();
        let (hs_concept, hs_transition) = self.branch_states(tables, steps)?;

        if self.wiring.teacher {
            self.teacher_training_loss(tables, steps, t, hs_concept.unwrap(), hs_transition.unwrap())
        } else if self.wiring.fused_concat_readout {
            self.fused_training_loss(tables, steps, t, hs_concept.unwrap(), hs_transition.unwrap())
        } else {
            let (hs, table, readout, is_concept) = match (&hs_concept, &hs_transition) {
                (Some(h), None) => (
                    h,
                    tables.concept.as_ref().unwrap(),
                    self.readout_concept.as_ref().unwrap(),
                    true,
                ),
                (None, Some(h)) => (
                    h,
                    tables.transition.as_ref().unwrap(),
                    self.readout_transition.as_ref().unwrap(),
                    false,
                ),
                _ => unreachable!("single branch variants have exactly one branch"),
            };
            let mut probs = Vec::with_capacity(t - 1);
            let mut targets = Vec::with_capacity(t - 1);
            for k in 0..t - 1 {
                let (e_next, r_next) = steps[k + 1];
                let state = knowledge_state(
                    &hs[k],
                    &table.correct.gather_rows(&[e_next])?,
                    &table.incorrect.gather_rows(&[e_next])?,
                )?;
                let (_, prob) = predict_prob(&state, readout)?;
                probs.push(prob);
                targets.push(r_next);
            }
            let ce = ce_loss(&probs, &targets)?;
            let ce_value = ce.item().into_f64();
            Ok(SequenceLoss {
                total: ce,
                ce_concept: is_concept.then_some(ce_value),
                ce_transition: (!is_concept).then_some(ce_value),
                ce_ensemble: None,
                ce_fused: None,
                kd: None,
                predictions: t - 1,
            })
        }
    }

    fn teacher_training_loss(
        &self,
        tables: &EncodedTables<S>,
        steps: &[(usize, bool)],
        t: usize,
        hs_concept: Vec<Tensor<S>>,
        hs_transition: Vec<Tensor<S>>,
    ) -> Result<SequenceLoss<S>> {
        let n = self.dims.num_exercises;
        let concept = tables.concept.as_ref().unwrap();
        let transition = tables.transition.as_ref().unwrap();
        let gate = self.gate.as_ref().unwrap();
        let readout_c = self.readout_concept.as_ref().unwrap();
        let readout_d = self.readout_transition.as_ref().unwrap();
        let readout_e = self.readout_ensemble.as_ref().unwrap();
        let gamma = S::of(self.config.gamma);

        let mut probs_c = Vec::with_capacity(t - 1);
        let mut probs_d = Vec::with_capacity(t - 1);
        let mut probs_e = Vec::with_capacity(t - 1);
        let mut targets = Vec::with_capacity(t - 1);
        let mut kd_terms: Vec<Tensor<S>> = Vec::new();

        for k in 0..t - 1 {
            let (e_next, r_next) = steps[k + 1];

            // knowledge states against every exercise at once
            let s_all_c = Tensor::concat_cols(&[
                &hs_concept[k].repeat_row(n)?,
                &concept.correct,
                &concept.incorrect,
            ])?;
            let s_all_d = Tensor::concat_cols(&[
                &hs_transition[k].repeat_row(n)?,
                &transition.correct,
                &transition.incorrect,
            ])?;
            let (z_c, y_c) = predict_prob(&s_all_c, readout_c)?;
            let (z_d, y_d) = predict_prob(&s_all_d, readout_d)?;
            let s_all_e = gate_fuse(gate, &s_all_c, &s_all_d)?;
            let (z_e, y_e) = predict_prob(&s_all_e, readout_e)?;

            probs_c.push(y_c.gather_rows(&[e_next])?);
            probs_d.push(y_d.gather_rows(&[e_next])?);
            probs_e.push(y_e.gather_rows(&[e_next])?);
            targets.push(r_next);

            let last_step = k == t - 2;
            if !self.config.distill_last_step_only || last_step {
                let z_e_for_kd = if self.config.stop_teacher_gradient {
                    z_e.detach()
                } else {
                    z_e
                };
                kd_terms.push(distill_loss(&z_e_for_kd, &z_c, &z_d, gamma)?);
            }
        }

        let ce_c = ce_loss(&probs_c, &targets)?;
        let ce_d = ce_loss(&probs_d, &targets)?;
        let ce_e = ce_loss(&probs_e, &targets)?;
        let mut kd = kd_terms[0].clone();
        for term in &kd_terms[1..] {
            kd = kd.add(term)?;
        }
        let kd = kd.scale(S::one() / S::of(kd_terms.len() as f64));

        let total = crate::distill::total_loss(&ce_c, &ce_d, &ce_e, &kd, S::of(self.config.lambda))?;
        Ok(SequenceLoss {
            ce_concept: Some(ce_c.item().into_f64()),
            ce_transition: Some(ce_d.item().into_f64()),
            ce_ensemble: Some(ce_e.item().into_f64()),
            ce_fused: None,
            kd: Some(kd.item().into_f64()),
            predictions: t - 1,
            total,
        })
    }

    fn fused_training_loss(
        &self,
        tables: &EncodedTables<S>,
        steps: &[(usize, bool)],
        t: usize,
        hs_concept: Vec<Tensor<S>>,
        hs_transition: Vec<Tensor<S>>,
    ) -> Result<SequenceLoss<S>> {
        let concept = tables.concept.as_ref().unwrap();
        let transition = tables.transition.as_ref().unwrap();
        let readout = self.readout_fused.as_ref().unwrap();
        let mut probs = Vec::with_capacity(t - 1);
        let mut targets = Vec::with_capacity(t - 1);
        for k in 0..t - 1 {
            let (e_next, r_next) = steps[k + 1];
            let s_c = knowledge_state(
                &hs_concept[k],
                &concept.correct.gather_rows(&[e_next])?,
                &concept.incorrect.gather_rows(&[e_next])?,
            )?;
            let s_d = knowledge_state(
                &hs_transition[k],
                &transition.correct.gather_rows(&[e_next])?,
                &transition.incorrect.gather_rows(&[e_next])?,
            )?;
            let joint = Tensor::concat_cols(&[&s_c, &s_d])?;
            let (_, prob) = predict_prob(&joint, readout)?;
            probs.push(prob);
            targets.push(r_next);
        }
        let ce = ce_loss(&probs, &targets)?;
        let ce_value = ce.item().into_f64();
        Ok(SequenceLoss {
            total: ce,
            ce_concept: None,
            ce_transition: None,
            ce_ensemble: None,
            ce_fused: Some(ce_value),
            kd: None,
            predictions: t - 1,
        })
    }

    /// Deployment probability for one queried exercise given per-branch
    /// hidden states.
    fn query_probability(
        &self,
        tables: &EncodedTables<S>,
        h_concept: Option<&Tensor<S>>,
        h_transition: Option<&Tensor<S>>,
        exercise: usize,
    ) -> Result<f64> {
        if exercise >= self.dims.num_exercises {
            return Err(DgektError::Data(format!(
                "exercise index {exercise} out of range for {} exercises",
                self.dims.num_exercises
            )));
        }
        let state = |table: &BranchTable<S>, h: &Tensor<S>| -> Result<Tensor<S>> {
            knowledge_state(
                h,
                &table.correct.gather_rows(&[exercise])?,
                &table.incorrect.gather_rows(&[exercise])?,
            )
        };
        let prob = if self.wiring.teacher {
            let s_c = state(tables.concept.as_ref().unwrap(), h_concept.unwrap())?;
            let s_d = state(tables.transition.as_ref().unwrap(), h_transition.unwrap())?;
            let s_e = gate_fuse(self.gate.as_ref().unwrap(), &s_c, &s_d)?;
            predict_prob(&s_e, self.readout_ensemble.as_ref().unwrap())?.1
        } else if self.wiring.fused_concat_readout {
            let s_c = state(tables.concept.as_ref().unwrap(), h_concept.unwrap())?;
            let s_d = state(tables.transition.as_ref().unwrap(), h_transition.unwrap())?;
            let joint = Tensor::concat_cols(&[&s_c, &s_d])?;
            predict_prob(&joint, self.readout_fused.as_ref().unwrap())?.1
        } else if let Some(h) = h_concept {
            let s = state(tables.concept.as_ref().unwrap(), h)?;
            predict_prob(&s, self.readout_concept.as_ref().unwrap())?.1
        } else {
            let s = state(
                tables.transition.as_ref().unwrap(),
                h_transition.expect("at least one branch exists"),
            )?;
            predict_prob(&s, self.readout_transition.as_ref().unwrap())?.1
        };
        Ok(prob.item().into_f64())
    }

    /// Deployment predictions along a sequence: the probability emitted at
    /// step k for the exercise actually attempted at k+1, paired with the
    /// observed response.
    pub fn score_sequence(
        &self,
        tables: &EncodedTables<S>,
        seq: &StudentSequence,
    ) -> Result<Vec<(f64, bool)>> {
        self.check_sequence(seq)?;
        let steps = &seq.steps;
        let (hs_c, hs_d) = self.branch_states(tables, steps)?;
        let mut scored = Vec::with_capacity(steps.len() - 1);
        for k in 0..steps.len() - 1 {
            let (e_next, r_next) = steps[k + 1];
            let y = self.query_probability(
                tables,
                hs_c.as_ref().map(|h| &h[k]),
                hs_d.as_ref().map(|h| &h[k]),
                e_next,
            )?;
            scored.push((y, r_next));
        }
        Ok(scored)
    }

    /// Probability that a student with the given history answers
    /// `exercise` correctly next.
    pub fn predict_next(
        &self,
        tables: &EncodedTables<S>,
        history: &[(usize, bool)],
        exercise: usize,
    ) -> Result<f64> {
        if history.is_empty() {
            return Err(DgektError::Data(
                "prediction requires at least one past interaction".into(),
            ));
        }
        for &(e, _) in history {
            if e >= self.dims.num_exercises {
                return Err(DgektError::Data(format!(
                    "exercise index {e} out of range for {} exercises",
                    self.dims.num_exercises
                )));
            }
        }
        let (hs_c, hs_d) = self.branch_states(
            tables,
            history,
        )?;
        let last = history.len() - 1;
        self.query_probability(
            tables,
            hs_c.as_ref().map(|h| &h[last]),
            hs_d.as_ref().map(|h| &h[last]),
            exercise,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EncoderKind;
    use crate::data::{build_vocabulary, InteractionRecord};
    use rand::SeedableRng;

    fn tiny_corpus() -> (Vec<InteractionRecord>, Vec<StudentSequence>) {
        let rec = |s: &str, e: &str, c: &str, correct: bool, order: i64| InteractionRecord {
            student_id: s.into(),
            exercise_id: e.into(),
            concept_ids: vec![c.into()],
            correct,
            order,
        };
        let records = vec![
            rec("s1", "e0", "c0", true, 0),
            rec("s1", "e1", "c0", false, 1),
            rec("s1", "e2", "c1", true, 2),
            rec("s2", "e1", "c0", true, 0),
            rec("s2", "e2", "c1", false, 1),
            rec("s2", "e3", "c1", true, 2),
        ];
        let vocab = build_vocabulary(&records).unwrap();
        let seqs = crate::data::make_sequences(&records, &vocab, 50).unwrap();
        (records, seqs)
    }

    fn tiny_config(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            embedding_dim: 4,
            graph_layers: 2,
            gru_hidden: 3,
            batch_size: 2,
            max_epochs: 1,
            ..TrainConfig::default()
        }
    }

    fn build(variant: Variant) -> (DgektModel<f64>, Vec<StudentSequence>) {
        let (records, seqs) = tiny_corpus();
        let vocab = build_vocabulary(&records).unwrap();
        let config = tiny_config(variant);
        let graphs = GraphSet::for_wiring(&variant.wiring(), &vocab, &seqs);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = DgektModel::new(&config, vocab.num_exercises(), &graphs, &mut rng).unwrap();
        (model, seqs)
    }

    #[test]
    fn full_variant_inventory() {
        let (model, _) = build(Variant::Dgekt);
        let inv = model.component_inventory();
        assert_eq!(inv.concept_encoder, Some(EncoderKind::Hypergraph));
        assert_eq!(inv.transition_encoder, Some(EncoderKind::DirectedTransition));
        assert_eq!(inv.embedding_tables, 1);
        assert_eq!(inv.gru_count, 2);
        assert!(inv.has_concept_readout && inv.has_transition_readout);
        assert!(inv.has_ensemble_readout && inv.has_gate);
        assert!(!inv.has_fused_readout);
    }

    #[test]
    fn ablation_inventories() {
        let (model, _) = build(Variant::RmCahg);
        let inv = model.component_inventory();
        assert_eq!(inv.concept_encoder, None);
        assert!(!inv.has_gate && !inv.has_ensemble_readout && !inv.has_concept_readout);
        assert_eq!(inv.gru_count, 1);

        let (model, _) = build(Variant::RmDtg);
        let inv = model.component_inventory();
        assert_eq!(inv.transition_encoder, None);
        assert!(!inv.has_transition_readout);

        let (model, _) = build(Variant::RmOkd);
        let inv = model.component_inventory();
        assert!(inv.has_fused_readout);
        assert!(!inv.has_gate && !inv.has_ensemble_readout);
        assert!(!inv.has_concept_readout && !inv.has_transition_readout);

        let (model, _) = build(Variant::Cag);
        assert_eq!(
            model.component_inventory().concept_encoder,
            Some(EncoderKind::ConceptClique)
        );

        let (model, _) = build(Variant::Tg);
        assert_eq!(
            model.component_inventory().transition_encoder,
            Some(EncoderKind::UndirectedTransition)
        );
    }

    #[test]
    fn fused_readout_width_doubles_the_state() {
        let (model, _) = build(Variant::RmOkd);
        let named = model.named_parameters();
        let (_, w) = named
            .iter()
            .find(|(n, _)| n == "readout.fused.weight")
            .unwrap();
        assert_eq!(w.shape(), (2 * model.dims.state_width, 1));
    }

    #[test]
    fn parameter_names_are_unique_and_stable() {
        let (model, _) = build(Variant::Dgekt);
        let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert!(names.contains(&"embedding.primary".to_string()));
        assert!(names.contains(&"encoder.concept.layer0.weight".to_string()));
        assert!(names.contains(&"encoder.transition.layer1.weight_out".to_string()));
        assert!(names.contains(&"gru.primary.w_cand".to_string()));
        assert!(names.contains(&"gate.bias".to_string()));
    }

    #[test]
    fn same_seed_same_initial_parameters() {
        let (a, _) = build(Variant::Dgekt);
        let (b, _) = build(Variant::Dgekt);
        for ((na, ta), (nb, tb)) in a.named_parameters().iter().zip(b.named_parameters().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data().as_slice(), tb.data().as_slice());
        }
    }

    #[test]
    fn training_loss_runs_and_is_finite_for_every_variant() {
        for variant in crate::config::ALL_VARIANTS {
            let (model, seqs) = build(variant);
            let tables = model.encode_tables().unwrap();
            let loss = model.training_loss(&tables, &seqs[0]).unwrap();
            let v = loss.total.item();
            assert!(v.is_finite() && v > 0.0, "{variant:?}: {v}");
            assert_eq!(loss.predictions, seqs[0].steps.len() - 1);
            match variant {
                Variant::Dgekt | Variant::Cag | Variant::Tg => {
                    assert!(loss.ce_concept.is_some() && loss.ce_transition.is_some());
                    assert!(loss.ce_ensemble.is_some() && loss.kd.is_some());
                }
                Variant::RmCahg => {
                    assert!(loss.ce_concept.is_none() && loss.ce_transition.is_some());
                    assert!(loss.kd.is_none());
                }
                Variant::RmDtg => {
                    assert!(loss.ce_concept.is_some() && loss.ce_transition.is_none());
                }
                Variant::RmOkd => {
                    assert!(loss.ce_fused.is_some() && loss.kd.is_none());
                }
            }
        }
    }

    #[test]
    fn teacher_total_includes_distillation_term() {
        let (model, seqs) = build(Variant::Dgekt);
        let tables = model.encode_tables().unwrap();
        let loss = model.training_loss(&tables, &seqs[0]).unwrap();
        let want = loss.ce_concept.unwrap()
            + loss.ce_transition.unwrap()
            + loss.ce_ensemble.unwrap()
            + model.config.lambda * loss.kd.unwrap();
        assert!((loss.total.item() - want).abs() < 1e-10);
    }

    #[test]
    fn gradients_reach_every_parameter_in_the_full_variant() {
        let (model, seqs) = build(Variant::Dgekt);
        let tables = model.encode_tables().unwrap();
        let mut total: Option<Tensor<f64>> = None;
        for s in &seqs {
            let l = model.training_loss(&tables, s).unwrap().total;
            total = Some(match total {
                Some(t) => t.add(&l).unwrap(),
                None => l,
            });
        }
        total.unwrap().backward().unwrap();
        for (name, p) in model.named_parameters() {
            assert!(
                p.grad().iter().any(|&g| g != 0.0),
                "no gradient reached {name}"
            );
        }
    }

    #[test]
    fn score_sequence_matches_training_ensemble_probabilities() {
        // the eval path computes the gate on a single row; it must agree
        // with the row of the all-exercise training path
        let (model, seqs) = build(Variant::Dgekt);
        let tables = model.encode_tables().unwrap();
        let scored = model.score_sequence(&tables, &seqs[0]).unwrap();
        assert_eq!(scored.len(), seqs[0].steps.len() - 1);
        for (y, _) in &scored {
            assert!(*y > 0.0 && *y < 1.0);
        }
    }

    #[test]
    fn predict_next_agrees_with_score_sequence() {
        for variant in crate::config::ALL_VARIANTS {
            let (model, seqs) = build(variant);
            let tables = model.encode_tables().unwrap();
            let seq = &seqs[0];
            let scored = model.score_sequence(&tables, seq).unwrap();
            let t = seq.steps.len();
            let prefix = &seq.steps[..t - 1];
            let (last_e, _) = seq.steps[t - 1];
            let direct = model.predict_next(&tables, prefix, last_e).unwrap();
            let from_scoring = scored.last().unwrap().0;
            assert!(
                (direct - from_scoring).abs() < 1e-12,
                "{variant:?}: {direct} vs {from_scoring}"
            );
        }
    }

    #[test]
    fn causality_prefix_determines_prediction() {
        // two sequences sharing a 3-step prefix get identical predictions
        // at the shared steps regardless of what follows
        let (model, mut seqs) = build(Variant::Dgekt);
        let tables = model.encode_tables().unwrap();
        let mut alt = seqs[0].clone();
        alt.steps[2] = (3, !alt.steps[2].1);
        seqs[0].steps.truncate(3);
        alt.steps.truncate(3);
        // same first two steps, change only the third
        let a = model.score_sequence(&tables, &seqs[0]).unwrap();
        let b = model.score_sequence(&tables, &alt).unwrap();
        assert_eq!(a[0].0, b[0].0);
    }

    #[test]
    fn predict_next_rejects_bad_inputs() {
        let (model, _) = build(Variant::Dgekt);
        let tables = model.encode_tables().unwrap();
        assert!(model.predict_next(&tables, &[], 0).is_err());
        assert!(model.predict_next(&tables, &[(0, true)], 99).is_err());
        assert!(model.predict_next(&tables, &[(99, true)], 0).is_err());
    }

    #[test]
    fn stop_teacher_gradient_blocks_kd_into_ensemble_only() {
        let (records, seqs) = tiny_corpus();
        let vocab = build_vocabulary(&records).unwrap();
        let mut config = tiny_config(Variant::Dgekt);
        config.lambda = 1.0;
        let graphs = GraphSet::for_wiring(&config.variant.wiring(), &vocab, &seqs);

        let grads_for = |stop: bool| {
            let mut c = config.clone();
            c.stop_teacher_gradient = stop;
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let model: DgektModel<f64> =
                DgektModel::new(&c, vocab.num_exercises(), &graphs, &mut rng).unwrap();
            // Push the ensemble logits well above both branch logits. At a
            // small random init the ensemble output can land between the two
            // branch outputs at every step, and there the distillation gap is
            // locally flat in the ensemble logit: its gradient cancels
            // exactly and the stop flag would have nothing to block.
            model
                .load_parameter("readout.ensemble.bias", &[5.0], (1, 1))
                .unwrap();
            let tables = model.encode_tables().unwrap();
            let loss = model.training_loss(&tables, &seqs[0]).unwrap();
            let kd = loss.kd.unwrap();
            loss.total.backward().unwrap();
            let named = model.named_parameters();
            let grad = |name: &str| {
                named
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| t.grad().clone())
                    .unwrap()
            };
            (
                kd,
                grad("gate.weight"),
                grad("readout.ensemble.weight"),
                grad("readout.concept.weight"),
            )
        };
        let (kd_flow, gate_flow, ens_flow, concept_flow) = grads_for(false);
        let (kd_stop, gate_stop, ens_stop, concept_stop) = grads_for(true);
        // stopping the gradient leaves the forward value alone
        assert_eq!(kd_flow, kd_stop);
        // the distillation gradient into the fused path goes away
        assert_ne!(gate_flow, gate_stop);
        assert_ne!(ens_flow, ens_stop);
        // while the branch readouts keep receiving it either way
        assert_eq!(concept_flow, concept_stop);
    }

    #[test]
    fn share_gru_and_separate_tables_flags() {
        let (records, seqs) = tiny_corpus();
        let vocab = build_vocabulary(&records).unwrap();
        let mut config = tiny_config(Variant::Dgekt);
        config.share_gru = true;
        config.separate_embedding_tables = true;
        let graphs = GraphSet::for_wiring(&config.variant.wiring(), &vocab, &seqs);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model: DgektModel<f64> =
            DgektModel::new(&config, vocab.num_exercises(), &graphs, &mut rng).unwrap();
        let inv = model.component_inventory();
        assert_eq!(inv.gru_count, 1);
        assert_eq!(inv.embedding_tables, 2);
        let tables = model.encode_tables().unwrap();
        assert!(model.training_loss(&tables, &seqs[0]).is_ok());
    }

    #[test]
    fn load_parameter_validates_name_and_shape() {
        let (model, _) = build(Variant::Dgekt);
        assert!(model.load_parameter("no.such.tensor", &[0.0], (1, 1)).is_err());
        let err = model
            .load_parameter("gate.bias", &[0.0; 3], (1, 3))
            .unwrap_err()
            .to_string();
        assert!(err.contains("1x3"), "{err}");
        assert!(err.contains(&format!("1x{}", model.dims.state_width)), "{err}");
        let k = model.dims.state_width;
        assert!(model.load_parameter("gate.bias", &vec![0.5; k], (1, k)).is_ok());
        assert_eq!(model.named_parameters().last().unwrap().1.data()[0], 0.5);
    }
}
