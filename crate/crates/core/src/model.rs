//! The complete classifier: aspect streams through the pair encoder, the
//! two gates, optional fusion with the behaviour encoder, and the head.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aspect::Aspect;
use crate::autograd::{Graph, Var};
use crate::encoder::{build_inputs, BehaviourEncoder, CrossMode, EncodedPair, EncoderConfig, PairEncoder};
use crate::error::{Error, Result};
use crate::fusion::{content_gate, hierarchical_fusion, target_gate, FusionWeights, GateOutput, GateWeights, MlpHead};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Which of the four aspects feed the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AspectMask {
    pub directed: bool,
    pub generalised: bool,
    pub explicit: bool,
    pub implicit: bool,
}

impl AspectMask {
    pub const ALL: AspectMask = AspectMask {
        directed: true,
        generalised: true,
        explicit: true,
        implicit: true,
    };

    pub fn from_aspects(aspects: &[Aspect]) -> Self {
        let mut m = AspectMask {
            directed: false,
            generalised: false,
            explicit: false,
            implicit: false,
        };
        for a in aspects {
            match a {
                Aspect::Directed => m.directed = true,
                Aspect::Generalised => m.generalised = true,
                Aspect::Explicit => m.explicit = true,
                Aspect::Implicit => m.implicit = true,
            }
        }
        m
    }

    pub fn contains(&self, a: Aspect) -> bool {
        match a {
            Aspect::Directed => self.directed,
            Aspect::Generalised => self.generalised,
            Aspect::Explicit => self.explicit,
            Aspect::Implicit => self.implicit,
        }
    }

    pub fn aspects(&self) -> Vec<Aspect> {
        Aspect::ALL.into_iter().filter(|a| self.contains(*a)).collect()
    }

    /// At least one target aspect and one content aspect.
    pub fn validate(&self) -> Result<()> {
        if !(self.directed || self.generalised) {
            return Err(Error::Config(format!("aspects {self} include no target aspect (D or G)")));
        }
        if !(self.explicit || self.implicit) {
            return Err(Error::Config(format!("aspects {self} include no content aspect (E or I)")));
        }
        Ok(())
    }

    /// The nine valid combinations in ablation order.
    pub fn ablation_grid() -> Vec<AspectMask> {
        ["d,e", "d,i", "d,e,i", "g,e", "g,i", "g,e,i", "d,g,e", "d,g,i", "d,g,e,i"]
            .iter()
            .map(|s| s.parse().expect("static grid"))
            .collect()
    }
}

impl Default for AspectMask {
    fn default() -> Self {
        AspectMask::ALL
    }
}

/// Displays as `D+G+E+I` in the order target aspects then content aspects.
impl fmt::Display for AspectMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order = [Aspect::Directed, Aspect::Generalised, Aspect::Explicit, Aspect::Implicit];
        let parts: Vec<String> = order
            .iter()
            .filter(|a| self.contains(**a))
            .map(|a| a.to_string())
            .collect();
        f.write_str(&parts.join("+"))
    }
}

/// Parses letter lists such as `d,g,e,i` or `D+E`.
impl FromStr for AspectMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut aspects = Vec::new();
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            let mut chars = part.chars();
            let a = match (chars.next(), chars.next()) {
                (Some(c), None) => Aspect::from_letter(c),
                _ => None,
            }
            .ok_or_else(|| Error::Config(format!("unknown aspect {part:?} (expected d, g, e or i)")))?;
            if aspects.contains(&a) {
                return Err(Error::Config(format!("aspect {a} listed twice")));
            }
            aspects.push(a);
        }
        let m = AspectMask::from_aspects(&aspects);
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectDims {
    pub directed: usize,
    pub generalised: usize,
    pub explicit: usize,
    pub implicit: usize,
    pub behaviour: usize,
}

impl Default for AspectDims {
    fn default() -> Self {
        AspectDims {
            directed: 16,
            generalised: 16,
            explicit: 16,
            implicit: 16,
            behaviour: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub mode: CrossMode,
    pub use_graph: bool,
    pub fusion_repeats: usize,
    pub aspects: AspectMask,
    pub dims: AspectDims,
    pub num_classes: usize,
    pub mlp_hidden: (usize, usize),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            mode: CrossMode::Cb,
            use_graph: true,
            fusion_repeats: 1,
            aspects: AspectMask::ALL,
            dims: AspectDims::default(),
            num_classes: 2,
            mlp_hidden: (64, 32),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.aspects.validate()?;
        if self.mode == CrossMode::None {
            return Err(Error::Config("the aspect encoder needs cb, cm or cbm".into()));
        }
        if self.fusion_repeats == 0 {
            return Err(Error::Config("fusion repeats must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.mlp_hidden.0 == 0 || self.mlp_hidden.1 == 0 {
            return Err(Error::Config("MLP hidden sizes must be positive".into()));
        }
        let d = &self.dims;
        for (a, w) in [
            (Aspect::Directed, d.directed),
            (Aspect::Generalised, d.generalised),
            (Aspect::Explicit, d.explicit),
            (Aspect::Implicit, d.implicit),
        ] {
            if self.aspects.contains(a) && w == 0 {
                return Err(Error::Config(format!("aspect {a} has zero width")));
            }
        }
        if self.use_graph && d.behaviour == 0 {
            return Err(Error::Config("behaviour embedding width must be positive".into()));
        }
        Ok(())
    }

    pub fn target_dim(&self) -> usize {
        let a = &self.aspects;
        self.dims.directed * a.directed as usize + self.dims.generalised * a.generalised as usize
    }

    pub fn content_dim(&self) -> usize {
        let a = &self.aspects;
        self.dims.explicit * a.explicit as usize + self.dims.implicit * a.implicit as usize
    }
}

/// Featurised text: one matrix per enabled aspect, the behaviour sequence
/// when the graph is on, and the real-token mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub directed: Option<Tensor>,
    pub generalised: Option<Tensor>,
    pub explicit: Option<Tensor>,
    pub implicit: Option<Tensor>,
    pub behaviour: Option<Tensor>,
    pub mask: Vec<bool>,
}

/// A [`Sample`] already recorded on a graph.
#[derive(Clone, Debug)]
pub struct SampleVars {
    pub directed: Option<Var>,
    pub generalised: Option<Var>,
    pub explicit: Option<Var>,
    pub implicit: Option<Var>,
    pub behaviour: Option<Var>,
    pub mask: Vec<bool>,
}

impl Sample {
    /// Records the matrices as constants, or as differentiable inputs.
    pub fn record(&self, g: &mut Graph, differentiable: bool) -> Result<SampleVars> {
        let mut leaf = |t: &Option<Tensor>| -> Result<Option<Var>> {
            t.as_ref()
                .map(|t| if differentiable { g.input(t.clone()) } else { g.constant(t.clone()) })
                .transpose()
        };
        Ok(SampleVars {
            directed: leaf(&self.directed)?,
            generalised: leaf(&self.generalised)?,
            explicit: leaf(&self.explicit)?,
            implicit: leaf(&self.implicit)?,
            behaviour: leaf(&self.behaviour)?,
            mask: self.mask.clone(),
        })
    }
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub t_e: Var,
    pub c_e: Var,
    pub encoded: EncodedPair,
    pub content_gate: GateOutput,
    pub target_gate: GateOutput,
    pub p_g: Option<Var>,
    pub behaviour_attention: Vec<Var>,
    pub f_f: Var,
    pub logits: Var,
    pub z: Var,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacasWeights {
    pub pair: PairEncoder,
    pub behaviour: Option<BehaviourEncoder>,
    pub content_gate: GateWeights,
    pub target_gate: GateWeights,
    pub fusion: Option<FusionWeights>,
    pub head: MlpHead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Macas {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub weights: MacasWeights,
}

impl Macas {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = &config.encoder;
        let (n, d, k) = (enc.max_len, enc.d_model, config.num_classes);
        let pair = PairEncoder::init(
            &mut store,
            "encoder",
            enc,
            config.mode,
            config.target_dim(),
            config.content_dim(),
            &mut rng,
        )?;
        let behaviour = if config.use_graph {
            Some(BehaviourEncoder::init(&mut store, "behaviour", enc, config.dims.behaviour, &mut rng)?)
        } else {
            None
        };
        let content_gate = GateWeights::init(&mut store, "content_gate", n, d, k, &mut rng);
        let target_gate = GateWeights::init(&mut store, "target_gate", n, d, k, &mut rng);
        let fusion = config
            .use_graph
            .then(|| FusionWeights::init(&mut store, "fusion", k, d, config.fusion_repeats, &mut rng));
        let fused = if config.use_graph { 2 * d } else { 2 * k };
        let head = MlpHead::init(&mut store, "head", fused, config.mlp_hidden, k, &mut rng);
        Ok(Macas {
            config,
            store,
            weights: MacasWeights {
                pair,
                behaviour,
                content_gate,
                target_gate,
                fusion,
                head,
            },
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Records the forward pass with parameters read from `store`, which
    /// must be laid out like `self.store`.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, x: &SampleVars) -> Result<Forward> {
        let n = self.config.encoder.max_len;
        if x.mask.len() != n {
            return Err(Error::Input(format!("sample has {} positions, model expects {n}", x.mask.len())));
        }
        let a = &self.config.aspects;
        let pick = |enabled: bool, v: Option<Var>, aspect: Aspect| -> Result<Option<Var>> {
            match (enabled, v) {
                (true, None) => Err(Error::Input(format!("sample lacks enabled aspect {aspect}"))),
                (true, v) => Ok(v),
                (false, _) => Ok(None),
            }
        };
        let (t_e, c_e) = build_inputs(
            g,
            pick(a.directed, x.directed, Aspect::Directed)?,
            pick(a.generalised, x.generalised, Aspect::Generalised)?,
            pick(a.explicit, x.explicit, Aspect::Explicit)?,
            pick(a.implicit, x.implicit, Aspect::Implicit)?,
            n,
        )?;
        let w = &self.weights;
        let encoded = w.pair.encode(g, store, t_e, c_e, &x.mask)?;
        let cg = content_gate(g, store, &w.content_gate, encoded.t_h, encoded.c_h)?;
        let tg = target_gate(g, store, &w.target_gate, encoded.c_h, encoded.t_h)?;
        let (p_g, behaviour_attention) = match &w.behaviour {
            Some(enc) => {
                let ge = x
                    .behaviour
                    .ok_or_else(|| Error::Input("graph mode needs the behaviour sequence".into()))?;
                let (p, att) = enc.encode(g, store, ge, &x.mask)?;
                (Some(p), att)
            }
            None => (None, Vec::new()),
        };
        let f_f = hierarchical_fusion(
            g,
            store,
            cg.logits,
            tg.logits,
            p_g,
            w.fusion.as_ref(),
            self.config.fusion_repeats,
        )?;
        let logits = w.head.logits(g, store, f_f)?;
        let z = g.softmax_rows(logits)?;
        Ok(Forward {
            t_e,
            c_e,
            encoded,
            content_gate: cg,
            target_gate: tg,
            p_g,
            behaviour_attention,
            f_f,
            logits,
            z,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: &SampleVars) -> Result<Forward> {
        self.forward_with(g, &self.store, x)
    }

    /// Class distribution `Z` in evaluation mode.
    pub fn predict(&self, sample: &Sample) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = sample.record(&mut g, false)?;
        let f = self.forward(&mut g, &x)?;
        Ok(g.value(f.z).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                num_encoders: 1,
                num_heads: 2,
                hidden_dim: 6,
                d_model: 4,
                dropout: 0.0,
                max_len: 3,
            },
            dims: AspectDims {
                directed: 2,
                generalised: 2,
                explicit: 3,
                implicit: 2,
                behaviour: 5,
            },
            num_classes: 3,
            mlp_hidden: (5, 4),
            ..Default::default()
        }
    }

    fn sample(cfg: &ModelConfig, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.encoder.max_len;
        let mut r = |rows: usize, cols: usize| {
            Some(Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        };
        Sample {
            directed: r(n, cfg.dims.directed),
            generalised: r(n, cfg.dims.generalised),
            explicit: r(n, cfg.dims.explicit),
            implicit: r(1, cfg.dims.implicit),
            behaviour: r(n, cfg.dims.behaviour),
            mask: vec![true; n],
        }
    }

    #[test]
    fn aspect_mask_parsing_and_grid() {
        let m: AspectMask = "d,g,e,i".parse().unwrap();
        assert_eq!(m, AspectMask::ALL);
        assert_eq!(m.to_string(), "D+G+E+I");
        assert_eq!("G+I".parse::<AspectMask>().unwrap().to_string(), "G+I");
        assert!("d,g".parse::<AspectMask>().is_err());
        assert!("e,i".parse::<AspectMask>().is_err());
        assert!("d,x".parse::<AspectMask>().is_err());
        let grid = AspectMask::ablation_grid();
        assert_eq!(grid.len(), 9);
        assert!(grid.iter().all(|m| m.validate().is_ok()));
    }

    #[test]
    fn every_mode_and_graph_setting_runs() {
        for mode in [CrossMode::Cb, CrossMode::Cm, CrossMode::Cbm] {
            for (graph, repeats) in [(false, 1), (true, 1), (true, 3)] {
                let cfg = ModelConfig {
                    mode,
                    use_graph: graph,
                    fusion_repeats: repeats,
                    ..toy_config()
                };
                let m = Macas::new(cfg.clone(), 1).unwrap();
                let z = m.predict(&sample(&cfg, 2)).unwrap();
                assert_eq!(z.shape(), &[1, 3]);
                assert!((z.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn disabled_aspects_are_ignored_and_missing_ones_error() {
        let cfg = ModelConfig {
            aspects: "d,e".parse().unwrap(),
            use_graph: false,
            ..toy_config()
        };
        let m = Macas::new(cfg.clone(), 0).unwrap();
        let mut s = sample(&cfg, 0);
        s.generalised = None;
        m.predict(&s).unwrap();
        s.explicit = None;
        assert!(matches!(m.predict(&s), Err(Error::Input(_))));
    }
}
