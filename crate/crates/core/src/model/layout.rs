//! Named parameter arrays and typed indices into them.

use super::ModelDims;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation.
    Normal(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LnIds {
    pub g: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnIds {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

/// Two affine maps with a nonlinearity between them.
#[derive(Clone, Copy, Debug)]
pub struct MlpIds {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct EncLayerIds {
    pub ln1: LnIds,
    pub attn: AttnIds,
    pub ln2: LnIds,
    pub ff: MlpIds,
}

#[derive(Clone, Copy, Debug)]
pub struct DecLayerIds {
    pub ln1: LnIds,
    pub self_attn: AttnIds,
    pub ln2: LnIds,
    pub cross: AttnIds,
    pub ln3: LnIds,
    pub ff: MlpIds,
}

#[derive(Clone, Debug)]
pub struct DecoderIds {
    pub layers: Vec<DecLayerIds>,
    pub ln_f: LnIds,
    pub out_bias: usize,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub enc: Vec<EncLayerIds>,
    pub enc_ln: LnIds,
    pub dec: Vec<DecoderIds>,
    pub q_specific: Vec<MlpIds>,
    pub q_shared: MlpIds,
    pub r_shift: Vec<MlpIds>,
    pub recon: Vec<MlpIds>,
}

/// Parameter groups for counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Encoder,
    Decoder(usize),
    Projector,
}

pub fn component_of(name: &str) -> Component {
    if name.starts_with("enc.") {
        Component::Encoder
    } else if let Some(rest) = name.strip_prefix("dec") {
        let lang = rest.split('.').next().and_then(|s| s.parse().ok()).unwrap_or(0);
        Component::Decoder(lang)
    } else {
        Component::Projector
    }
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn linear_w(&mut self, name: String, fan_in: usize, fan_out: usize, gain: f64) -> usize {
        let std = gain / (fan_in.max(1) as f64).sqrt();
        self.add(name, vec![fan_in, fan_out], Init::Normal(std))
    }

    fn ln(&mut self, p: &str, d: usize) -> LnIds {
        LnIds {
            g: self.add(format!("{p}.g"), vec![d], Init::Ones),
            b: self.add(format!("{p}.b"), vec![d], Init::Zeros),
        }
    }

    fn attn(&mut self, p: &str, d: usize, out_gain: f64) -> AttnIds {
        let mut wb = |s: &str, gain: f64| {
            (self.linear_w(format!("{p}.w{s}"), d, d, gain), self.add(format!("{p}.b{s}"), vec![d], Init::Zeros))
        };
        let (wq, bq) = wb("q", 1.0);
        let (wk, bk) = wb("k", 1.0);
        let (wv, bv) = wb("v", 1.0);
        let (wo, bo) = wb("o", out_gain);
        AttnIds { wq, bq, wk, bk, wv, bv, wo, bo }
    }

    fn mlp(&mut self, p: &str, d_in: usize, hidden: usize, d_out: usize, out_gain: f64) -> MlpIds {
        MlpIds {
            w1: self.linear_w(format!("{p}.w1"), d_in, hidden, 1.0),
            b1: self.add(format!("{p}.b1"), vec![hidden], Init::Zeros),
            w2: self.linear_w(format!("{p}.w2"), hidden, d_out, out_gain),
            b2: self.add(format!("{p}.b2"), vec![d_out], Init::Zeros),
        }
    }
}

impl Layout {
    pub fn new(dims: &ModelDims) -> Self {
        let d = dims.d_model;
        let mut b = Builder { specs: Vec::new() };
        let tok_emb = b.add("enc.tok_emb".into(), vec![dims.vocab, d], Init::Normal(dims.emb_std()));
        let pos_emb = b.add("enc.pos_emb".into(), vec![dims.max_len, d], Init::Normal(dims.emb_std()));
        let res_gain = 1.0 / ((2 * (dims.enc_layers + dims.dec_layers)).max(1) as f64).sqrt();
        let enc = (0..dims.enc_layers)
            .map(|l| {
                let p = format!("enc.{l}");
                EncLayerIds {
                    ln1: b.ln(&format!("{p}.ln1"), d),
                    attn: b.attn(&format!("{p}.attn"), d, res_gain),
                    ln2: b.ln(&format!("{p}.ln2"), d),
                    ff: b.mlp(&format!("{p}.ff"), d, dims.enc_ff, d, res_gain),
                }
            })
            .collect();
        let enc_ln = b.ln("enc.ln_f", d);
        let dec = (0..dims.n_langs)
            .map(|lang| {
                let layers = (0..dims.dec_layers)
                    .map(|l| {
                        let p = format!("dec{lang}.{l}");
                        DecLayerIds {
                            ln1: b.ln(&format!("{p}.ln1"), d),
                            self_attn: b.attn(&format!("{p}.self"), d, res_gain),
                            ln2: b.ln(&format!("{p}.ln2"), d),
                            cross: b.attn(&format!("{p}.cross"), d, res_gain),
                            ln3: b.ln(&format!("{p}.ln3"), d),
                            ff: b.mlp(&format!("{p}.ff"), d, dims.dec_ff, d, res_gain),
                        }
                    })
                    .collect();
                DecoderIds {
                    layers,
                    ln_f: b.ln(&format!("dec{lang}.ln_f"), d),
                    out_bias: b.add(format!("dec{lang}.out_bias"), vec![dims.vocab], Init::Zeros),
                }
            })
            .collect();
        let flat = dims.flag_len * d;
        let (h, z) = (dims.proj_hidden, dims.latent);
        // posterior heads start near the prior: small output weights
        let q_specific = (0..dims.n_langs).map(|i| b.mlp(&format!("q{i}"), flat, h, 2 * z, 0.1)).collect();
        let q_shared = b.mlp("qs", flat, h, 2 * z, 0.1);
        let r_shift = (0..dims.n_langs).map(|i| b.mlp(&format!("r{i}"), flat, h, 2 * z, 0.1)).collect();
        let recon = (0..dims.n_langs).map(|i| b.mlp(&format!("p{i}"), 2 * z, h, flat, 1.0)).collect();
        Layout { specs: b.specs, tok_emb, pos_emb, enc, enc_ln, dec, q_specific, q_shared, r_shift, recon }
    }

    pub fn total(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn count(&self, c: Component) -> usize {
        self.specs.iter().filter(|s| component_of(&s.name) == c).map(ParamSpec::numel).sum()
    }
}
