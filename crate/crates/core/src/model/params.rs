use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// How a parameter starts out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Name, shape and initialiser of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    for w in ["w_q", "w_k", "w_v", "w_o"] {
        out.push(spec(format!("{prefix}.{w}"), &[d, d], Init::Normal));
    }
    out.push(spec(format!("{prefix}.b_o"), &[d], Init::Zeros));
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    out.push(spec(format!("{prefix}.gain"), &[d], Init::Ones));
    out.push(spec(format!("{prefix}.shift"), &[d], Init::Zeros));
}

fn ff_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, d_ff: usize) {
    out.push(spec(format!("{prefix}.w1"), &[d, d_ff], Init::Normal));
    out.push(spec(format!("{prefix}.b1"), &[d_ff], Init::Zeros));
    out.push(spec(format!("{prefix}.w2"), &[d_ff, d], Init::Normal));
    out.push(spec(format!("{prefix}.b2"), &[d], Init::Zeros));
}

/// Every parameter the configuration needs, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let pose = cfg.joints * 3;
    let mut out = vec![
        spec("tbpm.conv.weight", &[cfg.kernel, 1, 3, d], Init::Normal),
        spec("tbpm.conv.bias", &[d], Init::Zeros),
    ];
    if !cfg.ablation.no_ie {
        out.push(spec("identity.table", &[cfg.max_persons, d], Init::Normal));
    }
    if !cfg.ablation.no_trpe {
        out.push(spec("trpe.table", &[cfg.trpe.table_rows(), cfg.d_head], Init::Normal));
    }
    for k in 0..cfg.blocks {
        let p = format!("encoder.{k}");
        attention_specs(&mut out, &format!("{p}.attn"), d);
        norm_specs(&mut out, &format!("{p}.norm1"), d);
        ff_specs(&mut out, &format!("{p}.ff"), d, cfg.d_ff);
        norm_specs(&mut out, &format!("{p}.norm2"), d);
    }
    out.push(spec("query.conv.weight", &[cfg.kernel, pose, d], Init::Normal));
    out.push(spec("query.conv.bias", &[d], Init::Zeros));
    for k in 0..cfg.decoder_layers {
        let p = format!("decoder.{k}");
        attention_specs(&mut out, &format!("{p}.self_attn"), d);
        norm_specs(&mut out, &format!("{p}.norm1"), d);
        attention_specs(&mut out, &format!("{p}.cross_attn"), d);
        norm_specs(&mut out, &format!("{p}.norm2"), d);
        ff_specs(&mut out, &format!("{p}.ff"), d, cfg.d_ff);
        norm_specs(&mut out, &format!("{p}.norm3"), d);
    }
    out.push(spec("head.fc1.weight", &[d, cfg.d_ff], Init::Normal));
    out.push(spec("head.fc1.bias", &[cfg.d_ff], Init::Zeros));
    // A zero final layer predicts zero displacement, i.e. a frozen pose.
    out.push(spec("head.fc2.weight", &[cfg.d_ff, cfg.k_out * pose], Init::Zeros));
    out.push(spec("head.fc2.bias", &[cfg.k_out * pose], Init::Zeros));
    out
}

/// Fresh parameters: normal(0, `init_std`) weights, zero biases, unit gains.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for s in param_specs(cfg) {
        let n: usize = s.shape.iter().product();
        let data = match s.init {
            Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        store.insert(s.name, Tensor::new(s.shape, data)?)?;
    }
    Ok(store)
}

/// Checks that `store` holds exactly the parameters `cfg` expects.
pub fn check_params(cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    let specs = param_specs(cfg);
    for s in &specs {
        let p = store
            .by_name(&s.name)
            .ok_or_else(|| Error::validation(s.name.clone(), "missing parameter"))?;
        if p.value.shape() != s.shape.as_slice() {
            return Err(Error::validation(
                s.name.clone(),
                format!("shape {:?}, expected {:?}", p.value.shape(), s.shape),
            ));
        }
    }
    if store.len() != specs.len() {
        let extra = store
            .iter()
            .map(|(_, p)| p.name.clone())
            .find(|n| !specs.iter().any(|s| &s.name == n))
            .unwrap_or_default();
        return Err(Error::validation(extra, "unexpected parameter"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_complete() {
        let cfg = ModelConfig::toy(16, 2, 2, 5);
        let a = init_params(&cfg, 3).unwrap();
        let b = init_params(&cfg, 3).unwrap();
        check_params(&cfg, &a).unwrap();
        for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
            assert_eq!(pa.value, pb.value);
        }
        assert!(a
            .by_name("head.fc2.weight")
            .unwrap()
            .value
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(a
            .by_name("encoder.1.norm2.gain")
            .unwrap()
            .value
            .data()
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn ablations_drop_tables() {
        let mut cfg = ModelConfig::toy(16, 2, 1, 5);
        cfg.ablation.no_trpe = true;
        cfg.ablation.no_ie = true;
        let s = init_params(&cfg, 0).unwrap();
        assert!(!s.contains("trpe.table"));
        assert!(!s.contains("identity.table"));
        let full = init_params(&ModelConfig::toy(16, 2, 1, 5), 0).unwrap();
        assert!(check_params(&cfg, &full).is_err());
    }
}
