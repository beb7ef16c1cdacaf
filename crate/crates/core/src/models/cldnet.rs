use super::params::{ModelParams, ParamInit, ParamSpec};
use super::{CldNetConfig, ModelError};
use crate::autodiff::{BatchNormMode, CheckpointFile, ConvParams, Real, RunningStats, Tape, Tensor, Var};

/// CldNet with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CldNet {
    config: CldNetConfig,
    params: ModelParams,
}

/// Logits plus any notes raised while evaluating (such as clamped dilations).
#[derive(Debug)]
pub struct ForwardOutput<T> {
    pub logits: Var<T>,
    pub warnings: Vec<String>,
}

#[derive(Default)]
struct Specs {
    params: Vec<ParamSpec>,
    norms: Vec<(String, usize)>,
}

impl Specs {
    fn add(&mut self, name: String, shape: &[usize], init: ParamInit) {
        self.params.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
    }

    fn norm(&mut self, prefix: &str, w: usize) {
        self.add(format!("{prefix}.bn_scale"), &[w], ParamInit::Ones);
        self.add(format!("{prefix}.bn_shift"), &[w], ParamInit::Zeros);
        self.norms.push((format!("{prefix}.bn"), w));
    }

    fn unit(&mut self, prefix: &str, cin: usize, w: usize, norm: bool) {
        self.add(format!("{prefix}.pw"), &[w, cin, 1, 1], ParamInit::FanIn(cin));
        self.add(format!("{prefix}.pw_bias"), &[w], ParamInit::Zeros);
        if norm {
            self.norm(prefix, w);
        }
    }

    fn block(&mut self, prefix: &str, cin: usize, w: usize) {
        self.add(format!("{prefix}.dw"), &[cin, 1, 3, 3], ParamInit::FanIn(9));
        self.unit(prefix, cin, w, true);
    }
}

fn specs(c: &CldNetConfig) -> Specs {
    let mut s = Specs::default();
    s.unit("stem", c.in_channels, c.stem_width, true);
    let mut ch = c.stem_width;
    for (l, &w) in c.u_widths.iter().enumerate() {
        s.block(&format!("enc{l}.0"), ch, w);
        s.block(&format!("enc{l}.1"), w, w);
        ch = w;
    }
    if c.bridge_width > 0 {
        s.block("bridge.0", ch, c.bridge_width);
        s.block("bridge.1", c.bridge_width, c.bridge_width);
        ch = c.bridge_width;
    }
    let bottom = ch;
    for i in 0..4 {
        s.block(&format!("aspp.b{i}"), bottom, c.aspp_branch_width);
    }
    s.unit("aspp.pool", bottom, c.aspp_branch_width, false);
    s.unit("aspp.proj", 5 * c.aspp_branch_width, c.aspp_width, true);
    for (l, &w) in c.u_widths.iter().enumerate().rev() {
        s.block(&format!("dec{l}.0"), ch + w, w);
        s.block(&format!("dec{l}.1"), w, w);
        ch = w;
    }
    // The fusion convolution over [decoder, upsampled pyramid] is stored as
    // two weight blocks so the pyramid half can run before upsampling.
    let fan_in = ch + c.aspp_width;
    s.add("fuse.pw_dec".into(), &[c.fuse_width, ch, 1, 1], ParamInit::FanIn(fan_in));
    s.add("fuse.pw_aspp".into(), &[c.fuse_width, c.aspp_width, 1, 1], ParamInit::FanIn(fan_in));
    s.add("fuse.pw_bias".into(), &[c.fuse_width], ParamInit::Zeros);
    s.norm("fuse", c.fuse_width);
    s.unit("head", c.fuse_width, c.num_classes, false);
    s
}

/// What follows a pointwise convolution.
#[derive(Clone, Copy)]
enum Tail {
    NormRelu,
    Relu,
    Linear,
}

struct Ctx<'a, T> {
    net: &'a CldNet,
    tape: &'a Tape<T>,
    vars: &'a [Var<T>],
    running: &'a mut [RunningStats],
    mode: BatchNormMode,
}

impl<T: Real> Ctx<'_, T> {
    fn p(&self, name: &str) -> &Var<T> {
        &self.vars[self.net.params.position(name)]
    }

    fn unit(&mut self, prefix: &str, x: &Var<T>, tail: Tail) -> Result<Var<T>, ModelError> {
        let y = self.tape.conv2d(
            x,
            self.p(&format!("{prefix}.pw")),
            Some(self.p(&format!("{prefix}.pw_bias"))),
            ConvParams::default(),
        )?;
        match tail {
            Tail::NormRelu => self.norm_relu(prefix, &y),
            Tail::Relu => Ok(self.tape.relu(&y)),
            Tail::Linear => Ok(y),
        }
    }

    fn norm_relu(&mut self, prefix: &str, y: &Var<T>) -> Result<Var<T>, ModelError> {
        let i = self.net.params.norm_position(&format!("{prefix}.bn"));
        let scale = self.p(&format!("{prefix}.bn_scale")).clone();
        let shift = self.p(&format!("{prefix}.bn_shift")).clone();
        let y = self.tape.batch_norm(y, &scale, &shift, &mut self.running[i], self.mode)?;
        Ok(self.tape.relu(&y))
    }

    fn block(&mut self, prefix: &str, x: &Var<T>, dilation: usize) -> Result<Var<T>, ModelError> {
        let c = x.dims4()?[1];
        let dw = self.tape.conv2d(
            x,
            self.p(&format!("{prefix}.dw")),
            None,
            ConvParams::same(3, dilation, c),
        )?;
        self.unit(prefix, &dw, Tail::NormRelu)
    }

    fn encode(&mut self, x: &Var<T>) -> Result<(Var<T>, Vec<Var<T>>), ModelError> {
        let cfg = &self.net.config;
        let mut h = self.unit("stem", x, Tail::NormRelu)?;
        let mut skips = Vec::with_capacity(cfg.u_depth());
        for l in 0..cfg.u_depth() {
            h = self.block(&format!("enc{l}.0"), &h, 1)?;
            h = self.block(&format!("enc{l}.1"), &h, 1)?;
            skips.push(h.clone());
            h = self.tape.max_pool2(&h)?;
        }
        if cfg.bridge_width > 0 {
            h = self.block("bridge.0", &h, 1)?;
            h = self.block("bridge.1", &h, 1)?;
        }
        Ok((h, skips))
    }

    fn aspp(
        &mut self,
        bottom: &Var<T>,
        context: Option<&Tensor<T>>,
        warnings: &mut Vec<String>,
    ) -> Result<Var<T>, ModelError> {
        let [n, c, h, w] = bottom.dims4()?;
        let extent = h.min(w);
        let mut branches = Vec::with_capacity(5);
        for (i, &d) in self.net.config.aspp_dilations.iter().enumerate() {
            let mut d_eff = d;
            if 2 * d + 1 > extent {
                d_eff = ((extent.saturating_sub(1)) / 2).max(1);
                warnings.push(format!(
                    "pyramid branch {i}: dilation {d} exceeds the {h}×{w} feature map, clamped to {d_eff}"
                ));
            }
            branches.push(self.block(&format!("aspp.b{i}"), bottom, d_eff)?);
        }
        let pooled = match context {
            Some(ctx) => {
                if ctx.shape() != [n, c, 1, 1] {
                    return Err(ModelError::InvalidConfig(format!(
                        "global context has shape {:?}, expected {:?}",
                        ctx.shape(),
                        [n, c, 1, 1]
                    )));
                }
                self.tape.constant(ctx.clone())
            }
            None => self.tape.gap(bottom)?,
        };
        let pooled = self.unit("aspp.pool", &pooled, Tail::Relu)?;
        branches.push(self.tape.broadcast(&pooled, h, w)?);
        let refs: Vec<&Var<T>> = branches.iter().collect();
        let cat = self.tape.concat(&refs)?;
        drop(branches);
        self.unit("aspp.proj", &cat, Tail::NormRelu)
    }

    fn run(&mut self, x: &Var<T>, context: Option<&Tensor<T>>) -> Result<ForwardOutput<T>, ModelError> {
        let cfg = &self.net.config;
        let depth = cfg.u_depth();
        let mut warnings = Vec::new();
        let (bottom, mut skips) = self.encode(x)?;
        let pyramid = self.aspp(&bottom, context, &mut warnings)?;
        let mut d = bottom;
        for l in (0..depth).rev() {
            let up = self.tape.upsample(&d, 2)?;
            let skip = skips.pop().expect("one skip per level");
            let cat = self.tape.concat(&[&up, &skip])?;
            d = self.block(&format!("dec{l}.0"), &cat, 1)?;
            d = self.block(&format!("dec{l}.1"), &d, 1)?;
        }
        // pw(concat(d, up(a))) == pw_dec(d) + up(pw_aspp(a)): upsampling is
        // linear per channel, so the projection commutes with it.
        let pd = ConvParams::default();
        let from_dec = self.tape.conv2d(&d, self.p("fuse.pw_dec"), Some(self.p("fuse.pw_bias")), pd)?;
        let from_aspp = self.tape.conv2d(&pyramid, self.p("fuse.pw_aspp"), None, pd)?;
        drop(pyramid);
        let from_aspp = self.tape.upsample(&from_aspp, 1 << depth)?;
        let fused = self.tape.add(&from_dec, &from_aspp)?;
        let fused = self.norm_relu("fuse", &fused)?;
        let logits = self.unit("head", &fused, Tail::Linear)?;
        Ok(ForwardOutput { logits, warnings })
    }
}

impl CldNet {
    pub fn new(config: CldNetConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let s = specs(&config);
        let params = ModelParams::init(&s.params, &s.norms, seed)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &CldNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_parameter_count()
    }

    fn check(&self, x: &Var<impl Real>) -> Result<(), ModelError> {
        let [_, c, h, w] = x.dims4()?;
        self.config.check_input(c, h, w)
    }

    /// Full forward pass on `[n, in_channels, h, w]` with parameters bound by
    /// [`ModelParams::bind`]. In training mode `running` is updated.
    ///
    /// `context`, when given, replaces the pooled branch's global average of
    /// the coarsest features (shape `[n, bottom_width, 1, 1]`).
    pub fn forward<T: Real>(
        &self,
        tape: &Tape<T>,
        vars: &[Var<T>],
        running: &mut [RunningStats],
        x: &Var<T>,
        mode: BatchNormMode,
        context: Option<&Tensor<T>>,
    ) -> Result<ForwardOutput<T>, ModelError> {
        self.check(x)?;
        let mut ctx = Ctx {
            net: self,
            tape,
            vars,
            running,
            mode,
        };
        ctx.run(x, context)
    }

    /// Inference-mode logits for a `[n, c, h, w]` input.
    pub fn predict(&self, x: Tensor<f32>, context: Option<&Tensor<f32>>) -> Result<ForwardOutput<f32>, ModelError> {
        let tape = Tape::inference();
        let vars = self.params.bind(&tape);
        let mut running = self.params.running().to_vec();
        let x = tape.constant(x);
        self.forward(&tape, &vars, &mut running, &x, BatchNormMode::Eval, context)
    }

    /// Inference-mode coarsest feature map (the pyramid's input).
    pub fn encode(&self, x: Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let tape = Tape::inference();
        let vars = self.params.bind(&tape);
        let mut running = self.params.running().to_vec();
        let x = tape.constant(x);
        self.check(&x)?;
        let mut ctx = Ctx {
            net: self,
            tape: &tape,
            vars: &vars,
            running: &mut running,
            mode: BatchNormMode::Eval,
        };
        let (bottom, _) = ctx.encode(&x)?;
        Ok(bottom.into_tensor())
    }

    pub fn to_checkpoint(&self) -> CheckpointFile {
        let config = serde_json::to_value(&self.config).expect("config serializes");
        let mut ckpt = CheckpointFile::new("cldnet", config);
        self.params.write_to(&mut ckpt);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &CheckpointFile) -> Result<Self, ModelError> {
        let config: CldNetConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
        let mut net = Self::new(config, 0)?;
        net.params.read_from(ckpt)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::random_tensor;

    fn tiny(in_channels: usize) -> CldNetConfig {
        CldNetConfig {
            in_channels,
            num_classes: 4,
            stem_width: 4,
            u_widths: vec![4, 6],
            bridge_width: 8,
            aspp_branch_width: 3,
            aspp_width: 5,
            aspp_dilations: [1, 2, 3, 4],
            fuse_width: 4,
        }
    }

    fn block_count(cin: usize, w: usize) -> usize {
        cin * 9 + cin * w + w + 2 * w
    }

    #[test]
    fn separable_block_count() {
        let mut s = Specs::default();
        s.block("b", 32, 64);
        let n: usize = s.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        assert_eq!(n, 2_528);
        assert_eq!(n, block_count(32, 64));
    }

    #[test]
    fn default_count_matches_symbolic_walk() {
        // Independent recount of the layer list.
        let c = CldNetConfig::default();
        let unit = |ci: usize, w: usize, bn: bool| ci * w + w + if bn { 2 * w } else { 0 };
        let mut n = unit(80, 32, true);
        n += block_count(32, 32) + block_count(32, 32);
        n += block_count(32, 64) + block_count(64, 64);
        n += block_count(64, 128) + block_count(128, 128);
        n += block_count(128, 320) + block_count(320, 320);
        n += 4 * block_count(320, 64) + unit(320, 64, false) + unit(320, 128, true);
        n += block_count(320 + 128, 128) + block_count(128, 128);
        n += block_count(128 + 64, 64) + block_count(64, 64);
        n += block_count(64 + 32, 32) + block_count(32, 32);
        n += unit(32 + 128, 64, true) + unit(64, 10, false);
        let net = CldNet::new(c, 1).unwrap();
        assert_eq!(net.parameter_count(), n);
        assert!((370_000..=550_000).contains(&n), "{n}");
    }

    #[test]
    fn fully_convolutional_shapes() {
        let net = CldNet::new(tiny(3), 2).unwrap();
        for (h, w) in [(8, 8), (16, 24)] {
            let out = net.predict(random_tensor(&[2, 3, h, w], 3).cast(), None).unwrap();
            assert_eq!(out.logits.shape(), &[2, 4, h, w]);
        }
        assert!(net.predict(Tensor::zeros(&[1, 3, 10, 8]), None).is_err());
    }

    #[test]
    fn clamped_dilation_is_reported() {
        let net = CldNet::new(tiny(3), 2).unwrap();
        // A 16×16 input gives a 4×4 coarsest map; dilations 2, 3, 4 exceed it.
        let out = net.predict(Tensor::zeros(&[1, 3, 16, 16]), None).unwrap();
        assert_eq!(out.warnings.len(), 3);
        let out = net.predict(Tensor::zeros(&[1, 3, 40, 40]), None).unwrap();
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = CldNet::new(tiny(3), 5).unwrap();
        let x: Tensor<f32> = random_tensor(&[1, 3, 16, 16], 6).cast();
        let a = net.predict(x.clone(), None).unwrap().logits.into_tensor();
        let b = net.predict(x, None).unwrap().logits.into_tensor();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut net = CldNet::new(CldNetConfig::default(), 7).unwrap();
        let x: Tensor<f32> = random_tensor(&[2, 80, 32, 32], 8).cast();
        let targets: Vec<u8> = (0..2 * 32 * 32).map(|i| ((i * 7 + i / 32) % 10) as u8).collect();
        let tape = Tape::new(true);
        let vars = net.params.bind(&tape);
        let xv = tape.constant(x);
        let mut running = net.params.running().to_vec();
        let out = net
            .forward(&tape, &vars, &mut running, &xv, BatchNormMode::Train, None)
            .unwrap();
        let (loss, _) = tape.masked_nll(&out.logits, &targets, None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        for (v, name) in vars.iter().zip(net.params.names()) {
            let g = grads.get(v).unwrap_or_else(|| panic!("{name} unused"));
            assert!(g.data().iter().any(|&x| x != 0.0), "{name} has zero gradient");
        }
        net.params.running_mut().clone_from_slice(&running);
        assert!(net.params.running().iter().all(|r| r.mean.iter().any(|&m| m != 0.0)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = CldNet::new(tiny(3), 9).unwrap();
        let back = CldNet::from_checkpoint(&net.to_checkpoint()).unwrap();
        assert_eq!(back, net);
    }
}
