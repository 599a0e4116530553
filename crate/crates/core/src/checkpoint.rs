//! Self-describing binary containers for trained models and exported
//! graphs.
//!
//! Layout: magic `DGEKT1`, format version (u32), a JSON header (config,
//! vocabulary, optimizer and generator state), then named tensor
//! sections with explicit dtype tags and shapes. Everything is little
//! endian. Loading validates magic, version, dtypes, shapes, and that no
//! bytes are missing or left over, so a truncated or tampered file never
//! yields partial state.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::Vocabulary;
use crate::diff::AdamState;
use crate::error::{DgektError, Result};
use crate::graph::{build_cahg, transition_graph_from_counts, GraphSet};
use crate::model::DgektModel;
use crate::scalar::{Dtype, Scalar};

const MAGIC: &[u8; 6] = b"DGEKT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ContainerKind {
    Checkpoint,
    Graphs,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    learning_rate: f64,
    step_count: u64,
}

#[derive(Serialize, Deserialize)]
struct RngHeader {
    seed: Vec<u8>,
    word_pos_lo: u64,
    word_pos_hi: u64,
    stream: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ContainerKind,
    config: Option<TrainConfig>,
    vocabulary: Vocabulary,
    best_epoch: Option<usize>,
    optimizer: Option<OptimizerHeader>,
    rng: Option<RngHeader>,
}

const DTG_COUNTS: &str = "graph.dtg.counts";

fn err(message: impl Into<String>) -> DgektError {
    DgektError::Checkpoint(message.into())
}

// ---- writing ----------------------------------------------------------

fn push_section_header(buf: &mut Vec<u8>, name: &str, dtype: Dtype, rows: usize, cols: usize) {
    let name_len = u16::try_from(name.len()).expect("tensor name fits in u16");
    buf.extend_from_slice(&name_len.to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(dtype.tag());
    buf.push(2); // rank
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    let payload = (rows * cols * dtype.byte_width()) as u64;
    buf.extend_from_slice(&payload.to_le_bytes());
}

fn push_scalar_section<S: Scalar>(
    buf: &mut Vec<u8>,
    name: &str,
    rows: usize,
    cols: usize,
    data: &[S],
) {
    assert_eq!(data.len(), rows * cols);
    push_section_header(buf, name, S::DTYPE, rows, cols);
    for &v in data {
        v.write_le(buf);
    }
}

fn push_u64_section(buf: &mut Vec<u8>, name: &str, rows: usize, cols: usize, data: &[u64]) {
    assert_eq!(data.len(), rows * cols);
    push_section_header(buf, name, Dtype::U64, rows, cols);
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn graph_sections(buf: &mut Vec<u8>, graphs: &GraphSet) -> u32 {
    match &graphs.dtg {
        Some(dtg) => {
            let flat: Vec<u64> = dtg
                .counts
                .iter()
                .flat_map(|&(f, t, c)| [f as u64, t as u64, c])
                .collect();
            push_u64_section(buf, DTG_COUNTS, dtg.counts.len(), 3, &flat);
            1
        }
        None => 0,
    }
}

fn write_container(path: &Path, header: &Header, sections: &[u8], count: u32) -> Result<()> {
    let header_json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(header_json.len() + sections.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(sections);
    fs::write(path, buf)?;
    Ok(())
}

/// Saves a trained model together with its optimizer state, vocabulary,
/// transition counts, and generator state.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &DgektModel<S>,
    adam: &AdamState<S>,
    vocabulary: &Vocabulary,
    graphs: &GraphSet,
    best_epoch: usize,
    rng: &ChaCha8Rng,
) -> Result<()> {
    let named = model.named_parameters();
    let moments = adam.moment_slices();
    if moments.len() != named.len() {
        return Err(err(format!(
            "optimizer tracks {} tensors, model has {} parameters",
            moments.len(),
            named.len()
        )));
    }
    let word_pos = rng.get_word_pos();
    let header = Header {
        kind: ContainerKind::Checkpoint,
        config: Some(model.config.clone()),
        vocabulary: vocabulary.clone(),
        best_epoch: Some(best_epoch),
        optimizer: Some(OptimizerHeader {
            learning_rate: adam.learning_rate().into_f64(),
            step_count: adam.step_count(),
        }),
        rng: Some(RngHeader {
            seed: rng.get_seed().to_vec(),
            word_pos_lo: word_pos as u64,
            word_pos_hi: (word_pos >> 64) as u64,
            stream: rng.get_stream(),
        }),
    };
    let mut sections = Vec::new();
    let mut count = 0u32;
    for ((name, tensor), (m, v)) in named.iter().zip(moments) {
        let (rows, cols) = tensor.shape();
        push_scalar_section(&mut sections, name, rows, cols, &tensor.data());
        push_scalar_section(&mut sections, &format!("{name}.adam_m"), rows, cols, m);
        push_scalar_section(&mut sections, &format!("{name}.adam_v"), rows, cols, v);
        count += 3;
    }
    count += graph_sections(&mut sections, graphs);
    write_container(path, &header, &sections, count)
}

/// Saves the graphs built from a dataset, without any model.
pub fn save_graphs(path: &Path, vocabulary: &Vocabulary, graphs: &GraphSet) -> Result<()> {
    let header = Header {
        kind: ContainerKind::Graphs,
        config: None,
        vocabulary: vocabulary.clone(),
        best_epoch: None,
        optimizer: None,
        rng: None,
    };
    let mut sections = Vec::new();
    let count = graph_sections(&mut sections, graphs);
    write_container(path, &header, &sections, count)
}

// ---- reading ----------------------------------------------------------

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| err("length overflow"))?;
        if end > self.bytes.len() {
            return Err(err(format!(
                "unexpected end of file at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(err(format!(
                "{} trailing bytes after the last section",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

struct RawTensor {
    dtype: Dtype,
    rows: usize,
    cols: usize,
    payload: Vec<u8>,
}

fn read_header(r: &mut Reader) -> Result<Header> {
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(err("not a model container (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(err(format!(
            "unsupported container version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let header_len = usize::try_from(r.u64()?).map_err(|_| err("header length overflow"))?;
    let header_bytes = r.take(header_len)?;
    Ok(serde_json::from_slice(header_bytes)?)
}

fn read_sections(r: &mut Reader) -> Result<Vec<(String, RawTensor)>> {
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| err("tensor name is not valid utf-8"))?
            .to_string();
        let dtype = Dtype::from_tag(r.u8()?)
            .ok_or_else(|| err(format!("unknown dtype tag in tensor {name:?}")))?;
        let rank = r.u8()?;
        if rank != 2 {
            return Err(err(format!("tensor {name:?} has rank {rank}, expected 2")));
        }
        let rows = usize::try_from(r.u64()?).map_err(|_| err("dimension overflow"))?;
        let cols = usize::try_from(r.u64()?).map_err(|_| err("dimension overflow"))?;
        let payload_len = usize::try_from(r.u64()?).map_err(|_| err("payload overflow"))?;
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(dtype.byte_width()))
            .ok_or_else(|| err("payload overflow"))?;
        if payload_len != expected {
            return Err(err(format!(
                "tensor {name:?} declares {payload_len} payload bytes, shape implies {expected}"
            )));
        }
        let payload = r.take(payload_len)?.to_vec();
        if out.iter().any(|(n, _)| *n == name) {
            return Err(err(format!("duplicate tensor {name:?}")));
        }
        out.push((
            name,
            RawTensor {
                dtype,
                rows,
                cols,
                payload,
            },
        ));
    }
    Ok(out)
}

fn decode_scalars<S: Scalar>(name: &str, raw: &RawTensor) -> Result<Vec<S>> {
    if raw.dtype != S::DTYPE {
        return Err(err(format!(
            "tensor {name:?} stores {} values but the model uses {}",
            raw.dtype,
            S::DTYPE
        )));
    }
    let w = raw.dtype.byte_width();
    Ok(raw.payload.chunks_exact(w).map(S::read_le).collect())
}

fn decode_u64(name: &str, raw: &RawTensor) -> Result<Vec<u64>> {
    if raw.dtype != Dtype::U64 {
        return Err(err(format!(
            "tensor {name:?} stores {}, expected {}",
            raw.dtype,
            Dtype::U64
        )));
    }
    Ok(raw
        .payload
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn rebuild_graphs(
    vocabulary: &Vocabulary,
    needs_cahg: bool,
    needs_dtg: bool,
    tensors: &mut Vec<(String, RawTensor)>,
) -> Result<GraphSet> {
    let cahg = needs_cahg.then(|| build_cahg(vocabulary));
    let dtg = if needs_dtg {
        let at = tensors
            .iter()
            .position(|(n, _)| n == DTG_COUNTS)
            .ok_or_else(|| err(format!("container is missing tensor {DTG_COUNTS:?}")))?;
        let (name, raw) = tensors.remove(at);
        if raw.cols != 3 {
            return Err(err(format!(
                "tensor {name:?} must have 3 columns, found {}",
                raw.cols
            )));
        }
        let flat = decode_u64(&name, &raw)?;
        let num_nodes = vocabulary.num_nodes();
        let mut counts = Vec::with_capacity(raw.rows);
        for triplet in flat.chunks_exact(3) {
            let (from, to) = (triplet[0] as usize, triplet[1] as usize);
            if from >= num_nodes || to >= num_nodes {
                return Err(err(format!(
                    "transition {from}->{to} is outside the {num_nodes} node space"
                )));
            }
            counts.push((from, to, triplet[2]));
        }
        Some(transition_graph_from_counts(num_nodes, counts))
    } else {
        None
    };
    Ok(GraphSet { cahg, dtg })
}

pub struct LoadedCheckpoint<S: Scalar> {
    pub model: DgektModel<S>,
    pub adam: AdamState<S>,
    pub vocabulary: Vocabulary,
    pub graphs: GraphSet,
    pub best_epoch: usize,
    pub rng: ChaCha8Rng,
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<LoadedCheckpoint<S>> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    let header = read_header(&mut r)?;
    if header.kind != ContainerKind::Checkpoint {
        return Err(err("file is a graphs container, not a checkpoint"));
    }
    let config = header
        .config
        .ok_or_else(|| err("checkpoint header lacks a config"))?;
    let optimizer = header
        .optimizer
        .ok_or_else(|| err("checkpoint header lacks optimizer state"))?;
    let rng_header = header
        .rng
        .ok_or_else(|| err("checkpoint header lacks generator state"))?;
    let mut tensors = read_sections(&mut r)?;
    r.finish()?;

    let vocabulary = header.vocabulary;
    let wiring = config.variant.wiring();
    let graphs = rebuild_graphs(
        &vocabulary,
        wiring.concept_branch.is_some(),
        wiring.transition_branch.is_some(),
        &mut tensors,
    )?;

    // construction order matches training, so shapes line up with the
    // stored config; values are then overwritten wholesale
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = DgektModel::<S>::new(&config, vocabulary.num_exercises(), &graphs, &mut init_rng)?;
    let params = model.parameters();
    let mut moments: Vec<(Vec<S>, Vec<S>)> = Vec::with_capacity(params.len());
    let mut take = |name: &str| -> Result<RawTensor> {
        let at = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| err(format!("checkpoint is missing tensor {name:?}")))?;
        Ok(tensors.remove(at).1)
    };
    for (name, _) in model.named_parameters() {
        let raw = take(&name)?;
        model.load_parameter(&name, &decode_scalars(&name, &raw)?, (raw.rows, raw.cols))?;
        let m = take(&format!("{name}.adam_m"))?;
        let v = take(&format!("{name}.adam_v"))?;
        for (moment_name, moment) in [("adam_m", &m), ("adam_v", &v)] {
            if (moment.rows, moment.cols) != (raw.rows, raw.cols) {
                return Err(err(format!(
                    "{name}.{moment_name} has shape {}x{}, parameter is {}x{}",
                    moment.rows, moment.cols, raw.rows, raw.cols
                )));
            }
        }
        moments.push((
            decode_scalars(&format!("{name}.adam_m"), &m)?,
            decode_scalars(&format!("{name}.adam_v"), &v)?,
        ));
    }
    if let Some((name, _)) = tensors.first() {
        return Err(err(format!("checkpoint holds unexpected tensor {name:?}")));
    }
    let adam = AdamState::restore(
        &params,
        S::of(optimizer.learning_rate),
        optimizer.step_count,
        moments,
    )?;

    let seed: [u8; 32] = rng_header
        .seed
        .as_slice()
        .try_into()
        .map_err(|_| err("generator seed must be 32 bytes"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(rng_header.stream);
    rng.set_word_pos(u128::from(rng_header.word_pos_lo) | (u128::from(rng_header.word_pos_hi) << 64));

    Ok(LoadedCheckpoint {
        adam,
        vocabulary,
        graphs,
        best_epoch: header.best_epoch.unwrap_or(0),
        rng,
        model,
    })
}

pub struct LoadedGraphs {
    pub vocabulary: Vocabulary,
    pub graphs: GraphSet,
}

pub fn load_graphs(path: &Path) -> Result<LoadedGraphs> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    let header = read_header(&mut r)?;
    if header.kind != ContainerKind::Graphs {
        return Err(err("file is a checkpoint, not a graphs container"));
    }
    let mut tensors = read_sections(&mut r)?;
    r.finish()?;
    let has_dtg = tensors.iter().any(|(n, _)| n == DTG_COUNTS);
    let graphs = rebuild_graphs(&header.vocabulary, true, has_dtg, &mut tensors)?;
    Ok(LoadedGraphs {
        vocabulary: header.vocabulary,
        graphs,
    })
}
