//! The navigation model: a shared patch-transformer image encoder, token and
//! position embeddings, a causal transformer backbone whose hidden states
//! form the navigation representation, a language-model head for actions and
//! instructions, and a dream head regressing panorama-face features.

mod config;
mod layers;
mod policy;

pub use config::ModelConfig;
pub use layers::INIT_STD;
pub use policy::ModelPolicy;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nncore::{checkpoint, AdamState, ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::episodes::{check_placeholders, vocab, SampleKind, StepSample, Target, DREAM_SLOTS};
use crate::error::{Error, Result};
use crate::sensors::Image;
use crate::world::Action;
use layers::{weight, Block, LayerNorm, Linear};

/// The four latent panoramic targets: RGB and depth, now and after one action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LpdTargetKind {
    Pi,
    Pd,
    Fpi,
    Fpd,
}

impl LpdTargetKind {
    pub const ALL: [LpdTargetKind; 4] = [LpdTargetKind::Pi, LpdTargetKind::Pd, LpdTargetKind::Fpi, LpdTargetKind::Fpd];

    pub fn from_sample(kind: SampleKind) -> Option<LpdTargetKind> {
        match kind {
            SampleKind::Pi => Some(LpdTargetKind::Pi),
            SampleKind::Pd => Some(LpdTargetKind::Pd),
            SampleKind::Fpi => Some(LpdTargetKind::Fpi),
            SampleKind::Fpd => Some(LpdTargetKind::Fpd),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LpdTargetKind::Pi => "pi",
            LpdTargetKind::Pd => "pd",
            LpdTargetKind::Fpi => "fpi",
            LpdTargetKind::Fpd => "fpd",
        }
    }
}

/// Per-component losses of one batch. Each component is the sum of its
/// samples' losses divided by the batch size, so
/// `total = act + ins + lambda * sum(fea)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub act: f64,
    pub ins: f64,
    pub fea: [f64; 4],
    pub lambda: f64,
    pub total: f64,
    /// Samples per kind, in [`SampleKind::ALL`] order.
    pub counts: [usize; 6],
}

impl LossReport {
    pub fn recomputed_total(&self) -> f64 {
        self.act + self.ins + self.lambda * self.fea.iter().sum::<f64>()
    }
}

/// Greedy decoding result. Non-action tokens decoded where an action was
/// expected are replaced by Stop and counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub actions: Vec<Action>,
    pub non_action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Token(usize),
    Image(usize),
}

#[derive(Debug, Clone)]
struct Vision {
    patch: Linear,
    pos: ParamId,
    blocks: Vec<Block>,
    ln: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    vis: Vision,
    tok: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
    dream: Linear,
}

/// A sample laid out as a backbone input.
struct Layout {
    slots: Vec<Slot>,
    prompt_len: usize,
}

impl Model {
    /// Fresh parameters from `seed` (truncated normal weights, zero biases,
    /// unit layer-norm gains).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = config.d;
        let hidden = config.mlp_ratio * d;
        let patches = config.patches_per_image();
        let vis = Vision {
            patch: Linear::new(&mut s, &mut rng, "vis.patch", config.patch_dim(), d),
            pos: weight(&mut s, &mut rng, "vis.pos", &[patches, d]),
            blocks: (0..config.enc_layers)
                .map(|i| Block::new(&mut s, &mut rng, &format!("vis.block{i}"), d, hidden))
                .collect(),
            ln: LayerNorm::new(&mut s, "vis.ln", d),
        };
        let tok = weight(&mut s, &mut rng, "text.tok", &[config.vocab_size, d]);
        let pos = weight(&mut s, &mut rng, "text.pos", &[config.max_seq, d]);
        let blocks = (0..config.layers)
            .map(|i| Block::new(&mut s, &mut rng, &format!("backbone.block{i}"), d, hidden))
            .collect();
        let ln_f = LayerNorm::new(&mut s, "backbone.ln", d);
        let head = Linear::new(&mut s, &mut rng, "head.lm", d, config.vocab_size);
        let dream = Linear::new(&mut s, &mut rng, "head.dream", d, d);
        Ok(Model {
            config,
            params: s,
            vis,
            tok,
            pos,
            blocks,
            ln_f,
            head,
            dream,
        })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.by_name(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let id = self.params.id(name).ok()?;
        Some(self.params.get_mut(id))
    }

    fn patchify(&self, images: &[&Image]) -> Result<Tensor> {
        let (size, p) = (self.config.image_size, self.config.patch);
        let grid = size / p;
        let mut data = Vec::with_capacity(images.len() * grid * grid * p * p * 3);
        for img in images {
            if img.width != size || img.height != size {
                return Err(nncore::NnError::ShapeMismatch {
                    op: "encode_image",
                    lhs: vec![img.height, img.width, 3],
                    rhs: vec![size, size, 3],
                }
                .into());
            }
            for gy in 0..grid {
                for gx in 0..grid {
                    for y in gy * p..(gy + 1) * p {
                        let row = 3 * (y * size + gx * p);
                        data.extend(img.data[row..row + 3 * p].iter().map(|&b| b as f64 / 255.0));
                    }
                }
            }
        }
        Ok(Tensor::new(vec![images.len() * grid * grid, p * p * 3], data)?)
    }

    /// Shared image encoder on the tape: one pooled `d`-vector per image.
    fn encode_on(&self, tape: &mut Tape, images: &[&Image]) -> Result<Var> {
        let s = &self.params;
        let np = self.config.patches_per_image();
        let x = tape.constant(self.patchify(images)?);
        let x = self.vis.patch.forward(tape, s, x)?;
        let pos = tape.param(s, self.vis.pos);
        let idx: Vec<usize> = (0..images.len()).flat_map(|_| 0..np).collect();
        let pos = tape.gather_rows(pos, &idx)?;
        let mut x = tape.add(x, pos)?;
        let segments = vec![np; images.len()];
        for b in &self.vis.blocks {
            x = b.forward(tape, s, x, &segments, self.config.heads, false)?;
        }
        let x = self.vis.ln.forward(tape, s, x)?;
        Ok(tape.mean_pool(x, np)?)
    }

    /// `d`-vector of one image.
    pub fn encode_image(&self, img: &Image) -> Result<Vec<f64>> {
        Ok(self.encode_images(&[img])?.remove(0))
    }

    /// Pooled vectors for several images, computed without gradients.
    pub fn encode_images(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let v = self.encode_on(&mut tape, images)?;
        Ok(tape.value(v).data().chunks(self.config.d).map(<[f64]>::to_vec).collect())
    }

    /// Token plus position embeddings.
    pub fn encode_text(&self, tokens: &[usize]) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(Error::Parse("empty prompt".into()));
        }
        let mut tape = Tape::new();
        let slots: Vec<Slot> = tokens.iter().map(|&t| Slot::Token(t)).collect();
        let x = self.embed(&mut tape, None, &[slots])?;
        Ok(tape.value(x).clone())
    }

    /// Input embeddings of ragged sequences: token rows or image rows, plus
    /// learned positions.
    fn embed(&self, tape: &mut Tape, images: Option<Var>, seqs: &[Vec<Slot>]) -> Result<Var> {
        let v = self.config.vocab_size;
        let mut table = tape.param(&self.params, self.tok);
        if let Some(img) = images {
            table = tape.concat(&[table, img])?;
        }
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        for seq in seqs {
            if seq.len() > self.config.max_seq {
                return Err(Error::SequenceTooLong(seq.len(), self.config.max_seq));
            }
            for (p, slot) in seq.iter().enumerate() {
                ids.push(match *slot {
                    Slot::Token(t) => {
                        if t >= v {
                            return Err(nncore::NnError::InvalidTarget { id: t, classes: v }.into());
                        }
                        t
                    }
                    Slot::Image(i) => v + i,
                });
                positions.push(p);
            }
        }
        let x = tape.gather_rows(table, &ids)?;
        let pos = tape.param(&self.params, self.pos);
        let pos = tape.gather_rows(pos, &positions)?;
        Ok(tape.add(x, pos)?)
    }

    /// Causal backbone over ragged sequences; final-norm hidden states.
    fn backbone_on(&self, tape: &mut Tape, images: Option<Var>, seqs: &[Vec<Slot>]) -> Result<Var> {
        let mut x = self.embed(tape, images, seqs)?;
        let segments: Vec<usize> = seqs.iter().map(Vec::len).collect();
        for b in &self.blocks {
            x = b.forward(tape, &self.params, x, &segments, self.config.heads, true)?;
        }
        Ok(self.ln_f.forward(tape, &self.params, x)?)
    }

    /// Prompt with placeholders bound to image rows `first..`, then the
    /// kind's tail: teacher-forced targets or dream slots.
    fn layout(&self, s: &StepSample, first: &[usize]) -> Result<Layout> {
        check_placeholders(s.kind, &s.prompt_tokens, self.config.n_history)?;
        let v = vocab();
        let mut next = first.iter();
        let mut slots: Vec<Slot> = s
            .prompt_tokens
            .iter()
            .map(|&t| match t == v.image() {
                true => Slot::Image(*next.next().expect("placeholder count checked")),
                false => Slot::Token(t),
            })
            .collect();
        let prompt_len = slots.len();
        match &s.target {
            Target::Actions(a) => {
                if a.len() != self.config.k_actions {
                    return Err(Error::KindMismatch {
                        expected: format!("{} target actions", self.config.k_actions),
                        got: format!("{}", a.len()),
                    });
                }
                slots.extend(a[..a.len() - 1].iter().map(|&x| Slot::Token(v.action_token(x))));
            }
            Target::Instruction(t) => slots.extend(t.iter().map(|&x| Slot::Token(x))),
            Target::Panorama(_) => slots.extend((0..DREAM_SLOTS).map(|i| Slot::Token(v.dream(i)))),
        }
        Ok(Layout { slots, prompt_len })
    }

    /// Unique images of `samples` (by identity) and each sample's image rows.
    fn gather_images<'a>(samples: &[&'a StepSample]) -> (Vec<&'a Image>, Vec<Vec<usize>>) {
        let mut index: HashMap<*const Image, usize> = HashMap::new();
        let mut unique: Vec<&Image> = Vec::new();
        let rows = samples
            .iter()
            .map(|s| {
                s.images()
                    .map(|img| {
                        *index.entry(Arc::as_ptr(img)).or_insert_with(|| {
                            unique.push(img);
                            unique.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        (unique, rows)
    }

    /// Backbone hidden states (the navigation representation) of one sample
    /// laid out as in training, `[l_seq, d]`.
    pub fn unr(&self, sample: &StepSample) -> Result<Tensor> {
        let (imgs, rows) = Self::gather_images(&[sample]);
        let mut tape = Tape::new();
        let iv = self.encode_on(&mut tape, &imgs)?;
        let layout = self.layout(sample, &rows[0])?;
        let h = self.backbone_on(&mut tape, Some(iv), &[layout.slots])?;
        Ok(tape.value(h).clone())
    }

    /// Shared-encoder features of the sample's four target faces. Computed
    /// on a separate tape, so they are constants for the loss.
    pub fn lpd_targets(&self, sample: &StepSample) -> Result<Vec<Vec<f64>>> {
        let Target::Panorama(pano) = &sample.target else {
            return Err(Error::KindMismatch {
                expected: "panorama target".into(),
                got: sample.kind.name().into(),
            });
        };
        self.encode_images(&pano.faces.iter().map(|f| f.as_ref()).collect::<Vec<_>>())
    }

    /// Dream-head outputs at the four dream slots, face order left, front,
    /// right, back.
    pub fn lpd_predict(&self, sample: &StepSample) -> Result<Vec<Vec<f64>>> {
        if !sample.kind.is_lpd() {
            return Err(Error::MissingDreamSlots(sample.kind.name().into()));
        }
        let (imgs, rows) = Self::gather_images(&[sample]);
        let mut tape = Tape::new();
        let iv = self.encode_on(&mut tape, &imgs)?;
        let layout = self.layout(sample, &rows[0])?;
        let start = layout.prompt_len;
        let h = self.backbone_on(&mut tape, Some(iv), &[layout.slots])?;
        let h = tape.slice_rows(h, start, DREAM_SLOTS)?;
        let y = self.dream.forward(&mut tape, &self.params, h)?;
        Ok(tape.value(y).data().chunks(self.config.d).map(<[f64]>::to_vec).collect())
    }

    /// Forward pass of a mixed-kind batch with every loss component recorded
    /// on the returned tape. `loss` is the scalar to differentiate.
    pub fn batch_loss(&self, samples: &[&StepSample], lambda: f64) -> Result<(Tape, Var, LossReport)> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let v = vocab();
        let d = self.config.d;
        let b = samples.len() as f64;
        let (imgs, rows) = Self::gather_images(samples);
        let mut tape = Tape::new();
        let iv = self.encode_on(&mut tape, &imgs)?;

        let mut seqs = Vec::with_capacity(samples.len());
        let mut act = (Vec::new(), Vec::new(), Vec::new());
        let mut ins = (Vec::new(), Vec::new(), Vec::new());
        let mut dream_rows: [Vec<usize>; 4] = Default::default();
        let mut faces: [Vec<&Image>; 4] = Default::default();
        let mut counts = [0usize; 6];
        let mut offset = 0;
        for (s, r) in samples.iter().zip(&rows) {
            let layout = self.layout(s, r)?;
            let at = offset + layout.prompt_len;
            counts[SampleKind::ALL.iter().position(|&k| k == s.kind).expect("listed")] += 1;
            match &s.target {
                Target::Actions(a) => {
                    let w = 1.0 / (a.len() as f64 * b);
                    for (j, &x) in a.iter().enumerate() {
                        act.0.push(at - 1 + j);
                        act.1.push(v.action_token(x));
                        act.2.push(w);
                    }
                }
                Target::Instruction(t) => {
                    let w = 1.0 / ((t.len() + 1) as f64 * b);
                    for (j, &x) in t.iter().chain(std::iter::once(&v.eos())).enumerate() {
                        ins.0.push(at - 1 + j);
                        ins.1.push(x);
                        ins.2.push(w);
                    }
                }
                Target::Panorama(pano) => {
                    let k = LpdTargetKind::from_sample(s.kind).ok_or_else(|| Error::KindMismatch {
                        expected: "lpd kind".into(),
                        got: s.kind.name().into(),
                    })?;
                    dream_rows[k.index()].extend(at..at + DREAM_SLOTS);
                    faces[k.index()].extend(pano.faces.iter().map(|f| f.as_ref()));
                }
            }
            offset += layout.slots.len();
            seqs.push(layout.slots);
        }
        let h = self.backbone_on(&mut tape, Some(iv), &seqs)?;

        let mut report = LossReport {
            lambda,
            counts,
            ..Default::default()
        };
        let mut total: Option<Var> = None;
        let mut acc = |tape: &mut Tape, x: Var| -> Result<()> {
            total = Some(match total {
                None => x,
                Some(t) => tape.add(t, x)?,
            });
            Ok(())
        };
        for (rows, slot) in [(&act, 0usize), (&ins, 1)] {
            if rows.0.is_empty() {
                continue;
            }
            let hr = tape.gather_rows(h, &rows.0)?;
            let logits = self.head.forward(&mut tape, &self.params, hr)?;
            let l = tape.weighted_cross_entropy(logits, &rows.1, &rows.2)?;
            let value = tape.value(l).item();
            if slot == 0 {
                report.act = value;
            } else {
                report.ins = value;
            }
            acc(&mut tape, l)?;
        }
        for k in LpdTargetKind::ALL {
            let rows = &dream_rows[k.index()];
            if rows.is_empty() {
                continue;
            }
            let targets: Vec<f64> = self.encode_images(&faces[k.index()])?.concat();
            let target = tape.constant(Tensor::new(vec![rows.len(), d], targets)?);
            let hr = tape.gather_rows(h, rows)?;
            let pred = self.dream.forward(&mut tape, &self.params, hr)?;
            let mse = tape.mse(pred, target)?;
            let n = (rows.len() / DREAM_SLOTS) as f64;
            let l = tape.scale(mse, n / b)?;
            report.fea[k.index()] = tape.value(l).item();
            let weighted = tape.scale(l, lambda)?;
            acc(&mut tape, weighted)?;
        }
        let total = total.expect("every sample contributes a component");
        report.total = tape.value(total).item();
        Ok((tape, total, report))
    }

    /// Loss components of a batch without keeping the tape.
    pub fn compute_losses(&self, samples: &[&StepSample], lambda: f64) -> Result<LossReport> {
        Ok(self.batch_loss(samples, lambda)?.2)
    }

    fn next_token(&self, images: &Tensor, slots: &[Slot]) -> Result<usize> {
        let mut tape = Tape::new();
        let iv = (images.rows() > 0).then(|| tape.constant(images.clone()));
        let h = self.backbone_on(&mut tape, iv, &[slots.to_vec()])?;
        let last = tape.slice_rows(h, slots.len() - 1, 1)?;
        let logits = self.head.forward(&mut tape, &self.params, last)?;
        let row = tape.value(logits).data();
        Ok(row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
            .0)
    }

    fn prompt_slots(&self, prompt: &[usize], image_vecs: &[Vec<f64>]) -> Result<(Tensor, Vec<Slot>)> {
        let v = vocab();
        let found = prompt.iter().filter(|&&t| t == v.image()).count();
        if found != image_vecs.len() {
            return Err(Error::PlaceholderCountMismatch {
                found,
                expected: image_vecs.len(),
            });
        }
        let mut next = 0;
        let slots = prompt
            .iter()
            .map(|&t| {
                if t == v.image() {
                    next += 1;
                    Slot::Image(next - 1)
                } else {
                    Slot::Token(t)
                }
            })
            .collect();
        let images = if image_vecs.is_empty() {
            Tensor::zeros(&[0, self.config.d])
        } else {
            Tensor::new(vec![image_vecs.len(), self.config.d], image_vecs.concat())?
        };
        Ok((images, slots))
    }

    /// Greedy decoding of exactly `k_actions` action tokens after `prompt`,
    /// whose placeholders bind to `image_vecs` in order.
    pub fn decode_actions(&self, prompt: &[usize], image_vecs: &[Vec<f64>]) -> Result<Decoded> {
        let v = vocab();
        let (images, mut slots) = self.prompt_slots(prompt, image_vecs)?;
        let mut out = Decoded {
            actions: Vec::new(),
            non_action: 0,
        };
        for _ in 0..self.config.k_actions {
            let t = self.next_token(&images, &slots)?;
            let a = v.token_action(t).unwrap_or_else(|| {
                out.non_action += 1;
                Action::Stop
            });
            out.actions.push(a);
            slots.push(Slot::Token(v.action_token(a)));
        }
        Ok(out)
    }

    /// Greedy decoding until end-of-sequence or `max_instruction` tokens.
    pub fn decode_instruction(&self, prompt: &[usize], image_vecs: &[Vec<f64>]) -> Result<Vec<usize>> {
        let eos = vocab().eos();
        let (images, mut slots) = self.prompt_slots(prompt, image_vecs)?;
        let mut out = Vec::new();
        while out.len() < self.config.max_instruction {
            let t = self.next_token(&images, &slots)?;
            if t == eos {
                break;
            }
            out.push(t);
            slots.push(Slot::Token(t));
        }
        Ok(out)
    }

    /// Convenience: encode the sample's images and decode its action triple.
    pub fn decode_sample(&self, sample: &StepSample) -> Result<Decoded> {
        let imgs: Vec<&Image> = sample.images().map(|i| i.as_ref()).collect();
        let vecs = self.encode_images(&imgs)?;
        self.decode_actions(&sample.prompt_tokens, &vecs)
    }

    pub fn save(&self, path: &Path, opt: Option<&AdamState>) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(checkpoint::save(path, &self.params, opt)?)
    }

    pub fn to_bytes(&self, opt: Option<&AdamState>) -> Vec<u8> {
        checkpoint::encode(&self.params, opt)
    }

    /// Restores parameters saved by a model of the same configuration.
    pub fn load(config: ModelConfig, path: &Path) -> Result<(Model, Option<AdamState>)> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(config, &bytes)
    }

    pub fn from_bytes(config: ModelConfig, bytes: &[u8]) -> Result<(Model, Option<AdamState>)> {
        let mut model = Model::new(config, 0)?;
        let (store, opt) = checkpoint::decode(bytes)?;
        let expected: Vec<(&str, &[usize])> = model.params.iter().map(|(n, t)| (n, t.shape())).collect();
        let got: Vec<(&str, &[usize])> = store.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != got {
            return Err(Error::Parse("checkpoint does not match the model configuration".into()));
        }
        model.params = store;
        Ok((model, opt))
    }

    /// Plain-text card saved next to checkpoints.
    pub fn card(&self, seed: u64, report: Option<&LossReport>) -> String {
        let mut s = format!(
            "model monodream-toy\nconfig_hash {}\nseed {seed}\nparameters {}\n",
            self.config.hash(),
            self.params.num_scalars()
        );
        s.push_str(&self.config.to_kv());
        if let Some(r) = report {
            s.push_str(&format!(
                "loss_total {:.6}\nloss_act {:.6}\nloss_ins {:.6}\n",
                r.total, r.act, r.ins
            ));
            for k in LpdTargetKind::ALL {
                s.push_str(&format!("loss_{} {:.6}\n", k.name(), r.fea[k.index()]));
            }
        }
        s
    }
}
