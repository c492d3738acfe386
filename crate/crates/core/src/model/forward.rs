use std::sync::Arc;

use super::attention::{multi_head_attention, AttentionBias, AttentionWeights};
use super::config::ModelConfig;
use super::params::{check_params, init_params};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::encodings::{
    build_psi, identity_encoding, temporal_positional_encoding, DistanceKind, TrajectorySimilarity, TrpeIndexMatrix,
};
use crate::error::{Error, Result};
use crate::motion::{idct_tensor, integrate_displacements, lowpass_smooth, to_displacements, Scene, Sequence};
use crate::tbpm::{concat_mpbp, joint_tokens, partition_pool, project, window_count, TokenLayout};

/// A configuration together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Everything about an observed scene that does not depend on parameters.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    /// Per person `T×B×3` part displacements (`T×J×3` without pooling).
    pub tokens: Vec<Tensor>,
    pub layout: TokenLayout,
    pub similarity: Option<TrajectorySimilarity>,
    pub psi: Option<TrpeIndexMatrix>,
    /// `M×D` temporal positional encoding.
    pub positional: Tensor,
    /// `P × (l·J·3)` flattened absolute poses of the last `l` observed frames.
    pub query_input: Tensor,
    /// Last observed pose per person, `J·3`.
    pub last_pose: Vec<Vec<f64>>,
}

/// Per-call switches.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub training: bool,
    pub dropout_seed: u64,
    pub record_attention: bool,
}

/// Head-averaged attention weights captured during a forward pass.
#[derive(Clone, Debug)]
pub struct AttentionDump {
    pub layout: TokenLayout,
    /// One `M×M` matrix per encoder block.
    pub encoder: Vec<Tensor>,
    /// One `P×M` matrix per decoder layer (queries over memory tokens).
    pub decoder_cross: Vec<Tensor>,
}

impl AttentionDump {
    /// Total cross-attention weight that person `from`'s query puts on
    /// person `to`'s tokens, averaged over decoder layers.
    pub fn cross_person_mass(&self, from: usize, to: usize) -> f64 {
        let u = self.layout.per_person();
        let total: f64 = self
            .decoder_cross
            .iter()
            .map(|a| a.row(from)[to * u..(to + 1) * u].iter().sum::<f64>())
            .sum();
        total / self.decoder_cross.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Predicted displacements, `(P·N) × (J·3)`, person-major.
    pub displacements: Var,
    pub attention: Option<AttentionDump>,
}

struct DropoutSeeds {
    base: u64,
    next: u64,
}

impl DropoutSeeds {
    fn take(&mut self) -> u64 {
        self.next += 1;
        self.base ^ self.next.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        check_params(&config, &params)?;
        Ok(Self { config, params })
    }

    /// Validates an observed scene against the configuration and precomputes
    /// tokens, the trajectory index matrix and query inputs.
    pub fn prepare(&self, observed: &Scene) -> Result<PreparedScene> {
        let cfg = &self.config;
        observed.validate()?;
        if observed.num_joints() != cfg.joints {
            return Err(Error::validation(
                "joints",
                format!(
                    "scene has {} joints, model expects {}",
                    observed.num_joints(),
                    cfg.joints
                ),
            ));
        }
        let frames = observed.num_frames();
        if frames < cfg.min_observed_frames() {
            return Err(Error::SequenceTooShort {
                what: "observed scene",
                needed: cfg.min_observed_frames(),
                got: frames,
            });
        }
        let persons = observed.num_persons();
        if !cfg.ablation.no_ie && persons > cfg.max_persons {
            return Err(Error::validation(
                "persons",
                format!("scene has {persons} persons, model supports {}", cfg.max_persons),
            ));
        }
        let t = frames - 1;
        let windows = window_count(t, cfg.kernel, cfg.stride);
        if windows == 0 {
            return Err(Error::SequenceTooShort {
                what: "observed displacements",
                needed: cfg.kernel,
                got: t,
            });
        }
        let disp = to_displacements(observed)?;
        let mut tokens = Vec::with_capacity(persons);
        for y in &disp.persons {
            let y = match cfg.k_in {
                Some(k) if k < t => lowpass_smooth(y, k)?,
                _ => y.clone(),
            };
            tokens.push(if cfg.ablation.no_tbpm {
                joint_tokens(&y)
            } else {
                partition_pool(&y, &observed.skeleton)?
            });
        }
        let layout = TokenLayout {
            persons,
            windows,
            parts: cfg.token_parts(),
        };
        let (similarity, psi) = if cfg.ablation.no_trpe {
            (None, None)
        } else {
            let roots: Vec<_> = (0..persons)
                .map(|p| observed.root_trajectory(p)[..t].to_vec())
                .collect();
            let kind = if cfg.ablation.eupe {
                DistanceKind::Euclidean
            } else {
                DistanceKind::SlDtw
            };
            let sim = TrajectorySimilarity::compute(&roots, cfg.kernel, cfg.stride, kind, cfg.trpe.dtw_gamma)?;
            let psi = build_psi(&sim, layout, &cfg.trpe)?;
            (Some(sim), Some(psi))
        };
        let positional = temporal_positional_encoding(layout, cfg.d_model)?;
        let width = cfg.kernel * cfg.joints * 3;
        let mut q = Vec::with_capacity(persons * width);
        for seq in &observed.persons {
            for f in frames - cfg.kernel..frames {
                q.extend_from_slice(seq.frame(f));
            }
        }
        Ok(PreparedScene {
            tokens,
            layout,
            similarity,
            psi,
            positional,
            query_input: Tensor::new([persons, width], q)?,
            last_pose: observed.last_poses(),
        })
    }

    /// Builds the forward graph on `tape`.
    pub fn forward(&self, tape: &mut Tape, prep: &PreparedScene, opts: ForwardOptions) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let store = &self.params;
        let mut seeds = DropoutSeeds {
            base: opts.dropout_seed,
            next: 0,
        };
        let p_drop = cfg.dropout;
        let layout = prep.layout;

        // Token stream.
        let conv_w = tape.param_by_name(store, "tbpm.conv.weight")?;
        let conv_b = tape.param_by_name(store, "tbpm.conv.bias")?;
        let mut projected = Vec::with_capacity(prep.tokens.len());
        for t in &prep.tokens {
            let x = tape.constant(t.clone());
            projected.push(project(tape, x, conv_w, conv_b, cfg.stride)?);
        }
        let mpbp = concat_mpbp(tape, &projected)?;
        let pe = tape.constant(prep.positional.clone());
        let mut h = tape.add(mpbp.features, pe)?;
        if !cfg.ablation.no_ie {
            let table = tape.param_by_name(store, "identity.table")?;
            let ie = identity_encoding(tape, table, layout)?;
            h = tape.add(h, ie)?;
        }

        let trpe = match &prep.psi {
            Some(psi) => Some((psi, tape.param_by_name(store, "trpe.table")?)),
            None => None,
        };
        let groups = cfg.ablation.no_sbi_msa.then(|| Arc::new(layout.person_of_rows()));
        let mut encoder_maps = Vec::new();
        for k in 0..cfg.blocks {
            let p = format!("encoder.{k}");
            let w = AttentionWeights::bind(tape, store, &format!("{p}.attn"))?;
            let bias = AttentionBias {
                trpe,
                groups: groups.clone(),
            };
            let (a, rec) = multi_head_attention(tape, h, h, &w, cfg.heads, bias, opts.record_attention)?;
            encoder_maps.extend(rec);
            let a = tape.dropout(a, p_drop, seeds.take(), opts.training);
            let r = tape.add(h, a)?;
            h = self.norm(tape, r, &format!("{p}.norm1"))?;
            let f = self.feed_forward(tape, h, &format!("{p}.ff"), &mut seeds, opts.training)?;
            let r = tape.add(h, f)?;
            h = self.norm(tape, r, &format!("{p}.norm2"))?;
        }
        let memory = h;

        // One query token per person from its last `l` absolute poses.
        let qx = tape.constant(prep.query_input.clone());
        let qw = tape.param_by_name(store, "query.conv.weight")?;
        let qw = tape.reshape(qw, [cfg.kernel * cfg.joints * 3, cfg.d_model])?;
        let qb = tape.param_by_name(store, "query.conv.bias")?;
        let q = tape.matmul(qx, qw)?;
        let mut x = tape.add_row(q, qb)?;

        let mut cross_maps = Vec::new();
        for k in 0..cfg.decoder_layers {
            let p = format!("decoder.{k}");
            let w = AttentionWeights::bind(tape, store, &format!("{p}.self_attn"))?;
            let (a, _) = multi_head_attention(tape, x, x, &w, cfg.heads, AttentionBias::default(), false)?;
            let a = tape.dropout(a, p_drop, seeds.take(), opts.training);
            let r = tape.add(x, a)?;
            x = self.norm(tape, r, &format!("{p}.norm1"))?;
            let w = AttentionWeights::bind(tape, store, &format!("{p}.cross_attn"))?;
            let (a, rec) = multi_head_attention(
                tape,
                x,
                memory,
                &w,
                cfg.heads,
                AttentionBias::default(),
                opts.record_attention,
            )?;
            cross_maps.extend(rec);
            let a = tape.dropout(a, p_drop, seeds.take(), opts.training);
            let r = tape.add(x, a)?;
            x = self.norm(tape, r, &format!("{p}.norm2"))?;
            let f = self.feed_forward(tape, x, &format!("{p}.ff"), &mut seeds, opts.training)?;
            let r = tape.add(x, f)?;
            x = self.norm(tape, r, &format!("{p}.norm3"))?;
        }

        let displacements = self.output_head(tape, x)?;
        let attention = opts.record_attention.then_some(AttentionDump {
            layout,
            encoder: encoder_maps,
            decoder_cross: cross_maps,
        });
        Ok(ForwardOutput {
            displacements,
            attention,
        })
    }

    fn norm(&self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
        let g = tape.param_by_name(&self.params, &format!("{prefix}.gain"))?;
        let s = tape.param_by_name(&self.params, &format!("{prefix}.shift"))?;
        tape.layer_norm(x, g, s)
    }

    fn feed_forward(
        &self,
        tape: &mut Tape,
        x: Var,
        prefix: &str,
        seeds: &mut DropoutSeeds,
        training: bool,
    ) -> Result<Var> {
        let store = &self.params;
        let w1 = tape.param_by_name(store, &format!("{prefix}.w1"))?;
        let b1 = tape.param_by_name(store, &format!("{prefix}.b1"))?;
        let w2 = tape.param_by_name(store, &format!("{prefix}.w2"))?;
        let b2 = tape.param_by_name(store, &format!("{prefix}.b2"))?;
        let z = tape.matmul(x, w1)?;
        let z = tape.add_row(z, b1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, w2)?;
        let z = tape.add_row(z, b2)?;
        Ok(tape.dropout(z, self.config.dropout, seeds.take(), training))
    }

    /// `P×D` → `(P·N) × (J·3)` displacements through two FC layers and the
    /// inverse DCT.
    fn output_head(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let cfg = &self.config;
        let store = &self.params;
        let w1 = tape.param_by_name(store, "head.fc1.weight")?;
        let b1 = tape.param_by_name(store, "head.fc1.bias")?;
        let w2 = tape.param_by_name(store, "head.fc2.weight")?;
        let b2 = tape.param_by_name(store, "head.fc2.bias")?;
        let z = tape.matmul(x, w1)?;
        let z = tape.add_row(z, b1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, w2)?;
        let coeffs = tape.add_row(z, b2)?;
        let idct = tape.constant(idct_tensor(cfg.horizon, cfg.k_out));
        let pose = cfg.joints * 3;
        let persons = tape.shape(x)[0];
        let mut out = Vec::with_capacity(persons);
        for p in 0..persons {
            let c = tape.slice_rows(coeffs, p, p + 1)?;
            let c = tape.reshape(c, [cfg.k_out, pose])?;
            out.push(tape.matmul(idct, c)?);
        }
        tape.concat_rows(&out)
    }

    /// Predicted displacements per person, `N×J×3`.
    pub fn predict_displacements(&self, observed: &Scene) -> Result<Vec<Sequence>> {
        let prep = self.prepare(observed)?;
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &prep, ForwardOptions::default())?;
        split_persons(tape.value(out.displacements), self.config.horizon, self.config.joints)
    }

    /// Forecasts the next `N` absolute poses of every person.
    pub fn predict(&self, observed: &Scene) -> Result<Scene> {
        let disp = self.predict_displacements(observed)?;
        let poses = integrate_displacements(&observed.last_poses(), &disp)?;
        Scene::new(observed.fps, observed.unit, observed.skeleton.clone(), poses)
    }

    /// Runs one evaluation pass and returns the recorded attention weights.
    pub fn attention(&self, observed: &Scene) -> Result<AttentionDump> {
        let prep = self.prepare(observed)?;
        let mut tape = Tape::new();
        let opts = ForwardOptions {
            record_attention: true,
            ..ForwardOptions::default()
        };
        let out = self.forward(&mut tape, &prep, opts)?;
        Ok(out.attention.expect("attention was recorded"))
    }
}

/// Splits a `(P·N) × (J·3)` tensor into per-person sequences.
pub fn split_persons(t: &Tensor, frames: usize, joints: usize) -> Result<Vec<Sequence>> {
    let width = joints * 3;
    if !t.len().is_multiple_of(frames * width) {
        return Err(Error::dim("split_persons", t.shape(), &[frames, width]));
    }
    t.data()
        .chunks(frames * width)
        .map(|c| Sequence::new(frames, joints, c.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{synth_scene, Behavior, SynthConfig};

    fn scene(persons: usize, frames: usize, seed: u64) -> Scene {
        let cfg = SynthConfig {
            persons,
            frames,
            behavior: Behavior::Mixed,
            ..SynthConfig::default()
        };
        synth_scene(&cfg, seed).unwrap()
    }

    fn toy() -> ModelConfig {
        ModelConfig {
            kernel: 5,
            d_ff: 32,
            ..ModelConfig::toy(16, 2, 2, 6)
        }
    }

    #[test]
    fn untrained_model_freezes_pose() {
        let m = Model::new(toy(), 1).unwrap();
        let obs = scene(3, 20, 4);
        let pred = m.predict(&obs).unwrap();
        assert_eq!(pred.num_frames(), 6);
        let last = obs.last_poses();
        for (p, seq) in pred.persons.iter().enumerate() {
            for f in 0..6 {
                assert_eq!(seq.frame(f), last[p].as_slice());
            }
        }
    }

    #[test]
    fn shapes_and_attention_dump() {
        let mut cfg = toy();
        cfg.init_std = 0.3;
        let m = Model::new(cfg, 2).unwrap();
        let obs = scene(3, 20, 5);
        let dump = m.attention(&obs).unwrap();
        let layout = dump.layout;
        assert_eq!(layout.windows, 19 - 5 + 1);
        assert_eq!(dump.encoder.len(), 2);
        assert_eq!(dump.encoder[0].shape(), &[layout.len(), layout.len()]);
        assert_eq!(dump.decoder_cross[0].shape(), &[3, layout.len()]);
        let mass: f64 = (0..3).map(|to| dump.cross_person_mass(0, to)).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_scenes() {
        let m = Model::new(toy(), 0).unwrap();
        assert!(matches!(
            m.predict(&scene(2, 20, 1).slice_frames(0, 5)),
            Err(Error::SequenceTooShort { .. })
        ));
        let mut small = toy();
        small.max_persons = 2;
        let m = Model::new(small, 0).unwrap();
        assert!(m.predict(&scene(3, 20, 1)).is_err());
    }

    #[test]
    fn person_order_is_equivariant_without_identity() {
        let mut cfg = toy();
        cfg.ablation.no_ie = true;
        cfg.init_std = 0.2;
        let m = Model::new(cfg, 9).unwrap();
        // Give the output layer weights so predictions are non-trivial.
        let mut m2 = m.clone();
        for p in m2.params.iter_mut() {
            if p.name == "head.fc2.weight" {
                p.value
                    .data_mut()
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, v)| *v = ((i as f64) * 0.37).sin() * 0.05);
            }
        }
        let obs = scene(3, 20, 6);
        let a = m2.predict_displacements(&obs).unwrap();
        let order = [2, 0, 1];
        let b = m2.predict_displacements(&obs.permuted(&order)).unwrap();
        for (k, &src) in order.iter().enumerate() {
            let diff = a[src]
                .data()
                .iter()
                .zip(b[k].data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-10, "person {src}: {diff}");
        }
    }

    #[test]
    fn ablations_run() {
        for flags in [&["no_tbpm"][..], &["no_trpe"], &["eupe"], &["no_sbi_msa"], &["no_ie"]] {
            let mut cfg = toy();
            cfg.ablation = crate::model::Ablation::from_flags(flags).unwrap();
            let m = Model::new(cfg, 3).unwrap();
            let pred = m.predict(&scene(2, 20, 2)).unwrap();
            assert_eq!(pred.num_persons(), 2);
        }
    }
}
