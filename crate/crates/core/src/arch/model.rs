use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::blocks::{ConvBlock, DimensionFusion, Rank, UpBlock};
use super::spec::{ArchSpec, Variant, STACK_DEPTH, TARGET_CHANNEL};
use crate::error::{Error, Result};
use crate::nn::{Conv, Mode, ParamStore, StatUpdate, Tape, Var};
use crate::tensor::{Shape, Tensor};

const LEVELS: usize = 5;

/// Parameter totals; `total` includes batch-norm running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterCounts {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

/// Switches for activation probes.
#[derive(Clone, Copy, Debug, Default)]
pub struct TraceOptions {
    /// Feed zeros to the volumetric branch instead of the slice stack.
    pub zero_volumetric_input: bool,
}

#[derive(Clone, Debug)]
struct PlanarNet {
    input_channels: usize,
    encoder: Vec<ConvBlock>,
    branch: Vec<ConvBlock>,
    branch_pools: Vec<[usize; 3]>,
    fusions: Vec<Option<DimensionFusion>>,
    decoder: Vec<UpBlock>,
    head: Conv,
}

#[derive(Clone, Debug)]
struct VolumetricNet {
    encoder: Vec<ConvBlock>,
    pools: Vec<[usize; 3]>,
    decoder: Vec<UpBlock>,
    squeeze: Conv,
    planar: ConvBlock,
    head: Conv,
}

#[derive(Clone, Debug)]
enum Net {
    Planar(PlanarNet),
    Volumetric(VolumetricNet),
}

/// A built network: its spec, parameters and layer graph.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ArchSpec,
    store: ParamStore,
    net: Net,
}

fn depth_pool(d: usize) -> usize {
    if d >= 2 {
        2
    } else {
        1
    }
}

impl Model {
    pub fn build(spec: &ArchSpec) -> Result<Self> {
        Self::build_seeded(spec, 0)
    }

    /// Builds the network with He-normal weights drawn from `seed`.
    pub fn build_seeded(spec: &ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = spec.bn_epsilon as f32;
        let f: Vec<usize> = (0..LEVELS).map(|k| spec.base_filters << k).collect();

        let net = match spec.variant {
            Variant::Unet2dOriginal | Variant::Unet2dTransform | Variant::Dunet => {
                let bn = (spec.variant != Variant::Unet2dOriginal).then_some(eps);
                let input_channels = spec.input_channels();
                let mut encoder = Vec::with_capacity(LEVELS);
                for k in 0..LEVELS {
                    let cin = if k == 0 { input_channels } else { f[k - 1] };
                    encoder.push(ConvBlock::new(&mut store, &mut rng, &format!("enc{}", k + 1), Rank::Planar, cin, f[k], bn));
                }
                let deepest = spec.fusion_stages.iter().max().map_or(0, |s| *s as usize);
                let mut branch = Vec::new();
                let mut branch_pools = Vec::new();
                let mut fusions = vec![None; LEVELS];
                let mut depth = STACK_DEPTH;
                for k in 0..deepest {
                    let cin = if k == 0 { 1 } else { f[k - 1] };
                    branch.push(ConvBlock::new(
                        &mut store,
                        &mut rng,
                        &format!("enc3d{}", k + 1),
                        Rank::Volumetric,
                        cin,
                        f[k],
                        Some(eps),
                    ));
                    if spec.fusion_stages.contains(&((k + 1) as u8)) {
                        let se = spec.use_se.then_some(spec.se_reduction);
                        fusions[k] = Some(DimensionFusion::new(
                            &mut store,
                            &mut rng,
                            &format!("fuse{}", k + 1),
                            f[k],
                            depth,
                            f[k],
                            se,
                        )?);
                    }
                    let dz = depth_pool(depth);
                    branch_pools.push([2, 2, dz]);
                    depth /= dz;
                }
                let mut decoder = Vec::with_capacity(LEVELS - 1);
                for l in (0..LEVELS - 1).rev() {
                    decoder.push(UpBlock::new(
                        &mut store,
                        &mut rng,
                        &format!("dec{}", LEVELS - 1 - l),
                        Rank::Planar,
                        [2, 2, 1],
                        f[l + 1],
                        f[l],
                        f[l],
                        bn,
                    ));
                }
                let head = Conv::new(&mut store, &mut rng, "head", [1, 1, 1], f[0], 1);
                Net::Planar(PlanarNet {
                    input_channels,
                    encoder,
                    branch,
                    branch_pools,
                    fusions,
                    decoder,
                    head,
                })
            }
            Variant::Unet3dTransform => {
                let bn = Some(eps);
                let mut encoder = Vec::with_capacity(LEVELS);
                let mut pools = Vec::with_capacity(LEVELS - 1);
                let mut depth = STACK_DEPTH;
                for k in 0..LEVELS {
                    let cin = if k == 0 { 1 } else { f[k - 1] };
                    encoder.push(ConvBlock::new(&mut store, &mut rng, &format!("enc{}", k + 1), Rank::Volumetric, cin, f[k], bn));
                    if k + 1 < LEVELS {
                        let dz = depth_pool(depth);
                        pools.push([2, 2, dz]);
                        depth /= dz;
                    }
                }
                let mut decoder = Vec::with_capacity(LEVELS - 1);
                for l in (0..LEVELS - 1).rev() {
                    decoder.push(UpBlock::new(
                        &mut store,
                        &mut rng,
                        &format!("dec{}", LEVELS - 1 - l),
                        Rank::Volumetric,
                        pools[l],
                        f[l + 1],
                        f[l],
                        f[l],
                        bn,
                    ));
                }
                let squeeze = Conv::new(&mut store, &mut rng, "squeeze", [1, 1, 1], f[0], 1);
                let planar = ConvBlock::new(&mut store, &mut rng, "planar", Rank::Planar, STACK_DEPTH, f[0], bn);
                let head = Conv::new(&mut store, &mut rng, "head", [1, 1, 1], f[0], 1);
                Net::Volumetric(VolumetricNet {
                    encoder,
                    pools,
                    decoder,
                    squeeze,
                    planar,
                    head,
                })
            }
        };
        Ok(Model {
            spec: spec.clone(),
            store,
            net,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn count_parameters(&self) -> usize {
        self.store.total_count()
    }

    pub fn parameter_counts(&self) -> ParameterCounts {
        let total = self.store.total_count();
        let trainable = self.store.trainable_count();
        ParameterCounts {
            total,
            trainable,
            non_trainable: total - trainable,
        }
    }

    /// Name and shape of every parameter tensor in construction order.
    pub fn inventory(&self) -> Vec<(String, Vec<usize>)> {
        self.store.inventory()
    }

    /// A tape reading this model's parameters.
    pub fn tape(&self, mode: Mode, seed: u64) -> Tape<'_> {
        Tape::new(&self.store, mode, seed)
    }

    /// Accepted batch layout for this model: `n×h×w×4`, or `n×h×w×1` for
    /// single-slice networks.
    pub fn check_input(&self, s: Shape) -> Result<()> {
        let [h, w, c] = self.spec.input_shape;
        let channels_ok = s.c == STACK_DEPTH || s.c == c;
        if s.volumetric || s.d != 1 || s.h != h || s.w != w || !channels_ok || s.n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} expects n×{h}×{w}×{STACK_DEPTH} input, got {s}",
                self.spec.label()
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape` (which must read this model's
    /// parameters) and returns the probability map.
    pub fn trace(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.trace_with(tape, x, TraceOptions::default())
    }

    pub fn trace_with(&self, tape: &mut Tape, x: Var, opts: TraceOptions) -> Result<Var> {
        if !std::ptr::eq(tape.store(), &self.store) {
            return Err(Error::InvalidArgument("tape was created for another model".into()));
        }
        let s = tape.shape(x);
        self.check_input(s)?;
        tape.tag(x, "input");
        match &self.net {
            Net::Planar(net) => self.trace_planar(net, tape, x, opts),
            Net::Volumetric(net) => self.trace_volumetric(net, tape, x),
        }
    }

    fn volume_view(tape: &mut Tape, x: Var, zero: bool) -> Result<Var> {
        let s = tape.shape(x);
        let vs = Shape::volumetric(s.n, s.h, s.w, s.c, 1);
        if zero {
            Ok(tape.input(Tensor::zeros(vs)))
        } else {
            tape.reshape(x, vs)
        }
    }

    fn trace_planar(&self, net: &PlanarNet, tape: &mut Tape, x: Var, opts: TraceOptions) -> Result<Var> {
        let s = tape.shape(x);
        let mut cur = if net.input_channels == 1 && s.c != 1 {
            tape.select_channel(x, TARGET_CHANNEL)?
        } else {
            x
        };
        let mut cur3 = if net.branch.is_empty() {
            None
        } else {
            let v = Self::volume_view(tape, x, opts.zero_volumetric_input)?;
            tape.tag(v, "input3d");
            Some(v)
        };
        let mut skips = Vec::with_capacity(LEVELS - 1);
        for k in 0..LEVELS {
            let stage = k + 1;
            let mut h = net.encoder[k].apply(tape, cur)?;
            tape.tag(h, format!("conv{stage}"));
            if let (Some(block), Some(v)) = (net.branch.get(k), cur3) {
                let h3 = block.apply(tape, v)?;
                tape.tag(h3, format!("conv3d{stage}"));
                if let Some(fusion) = &net.fusions[k] {
                    h = fusion.apply(tape, h3, h)?;
                    tape.tag(h, format!("fuse{stage}"));
                }
                cur3 = if k + 1 < net.branch.len() {
                    let p = tape.max_pool(h3, net.branch_pools[k])?;
                    tape.tag(p, format!("pool3d{stage}"));
                    Some(p)
                } else {
                    None
                };
            }
            if k >= 3 {
                h = tape.dropout(h, self.spec.dropout_rate);
                tape.tag(h, format!("drop{stage}"));
            }
            if k + 1 < LEVELS {
                skips.push(h);
                cur = tape.max_pool(h, [2, 2, 1])?;
                tape.tag(cur, format!("pool{stage}"));
            } else {
                cur = h;
            }
        }
        for (i, up) in net.decoder.iter().enumerate() {
            let skip = skips[LEVELS - 2 - i];
            cur = up.apply(tape, cur, skip)?;
            tape.tag(cur, format!("up{}", i + 1));
        }
        let logits = net.head.apply(tape, cur)?;
        let out = tape.sigmoid(logits);
        tape.tag(out, "output");
        Ok(out)
    }

    fn trace_volumetric(&self, net: &VolumetricNet, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut cur = Self::volume_view(tape, x, false)?;
        tape.tag(cur, "input3d");
        let mut skips = Vec::with_capacity(LEVELS - 1);
        for k in 0..LEVELS {
            let stage = k + 1;
            let mut h = net.encoder[k].apply(tape, cur)?;
            tape.tag(h, format!("conv{stage}"));
            if k >= 3 {
                h = tape.dropout(h, self.spec.dropout_rate);
                tape.tag(h, format!("drop{stage}"));
            }
            if k + 1 < LEVELS {
                skips.push(h);
                cur = tape.max_pool(h, net.pools[k])?;
                tape.tag(cur, format!("pool{stage}"));
            } else {
                cur = h;
            }
        }
        for (i, up) in net.decoder.iter().enumerate() {
            cur = up.apply(tape, cur, skips[LEVELS - 2 - i])?;
            tape.tag(cur, format!("up{}", i + 1));
        }
        let s = tape.shape(cur);
        let sq = net.squeeze.apply(tape, cur)?;
        let planes = tape.reshape(sq, Shape::planar(s.n, s.h, s.w, s.d))?;
        tape.tag(planes, "squeeze");
        let p = net.planar.apply(tape, planes)?;
        tape.tag(p, "planar");
        let logits = net.head.apply(tape, p)?;
        let out = tape.sigmoid(logits);
        tape.tag(out, "output");
        Ok(out)
    }

    /// Inference: `n×h×w×4` stack batch to `n×h×w×1` probabilities.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = self.tape(Mode::Eval, 0);
        let x = tape.input(batch.clone());
        let y = self.trace(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Every tagged activation of an inference pass, in execution order.
    pub fn activations(&self, batch: &Tensor, opts: TraceOptions) -> Result<Vec<(String, Tensor)>> {
        let mut tape = self.tape(Mode::Eval, 0);
        let x = tape.input(batch.clone());
        self.trace_with(&mut tape, x, opts)?;
        Ok(tape
            .tags()
            .iter()
            .map(|(name, v)| (name.clone(), tape.value(*v).clone()))
            .collect())
    }

    /// Feature size of each tagged layer for a batch of one.
    pub fn layer_shapes(&self) -> Result<Vec<(String, Shape)>> {
        let [h, w, _] = self.spec.input_shape;
        let probe = Tensor::zeros(Shape::planar(1, h, w, STACK_DEPTH));
        Ok(self
            .activations(&probe, TraceOptions::default())?
            .into_iter()
            .map(|(name, t)| (name, t.shape()))
            .collect())
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate]) {
        let m = self.spec.bn_momentum as f32;
        for u in updates {
            let mean = &mut self.store.get_mut(u.moving_mean).data;
            mean.iter_mut().zip(&u.batch_mean).for_each(|(r, b)| *r = m * *r + (1.0 - m) * b);
            let var = &mut self.store.get_mut(u.moving_var).data;
            var.iter_mut().zip(&u.batch_var).for_each(|(r, b)| *r = m * *r + (1.0 - m) * b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Preset;

    fn small(p: Preset) -> ArchSpec {
        p.spec().with_resolution(32).with_base_filters(16)
    }

    #[test]
    fn counts_are_resolution_independent() {
        let a = Model::build(&small(Preset::SeAdd23)).unwrap().count_parameters();
        let b = Model::build(&small(Preset::SeAdd23).with_resolution(64)).unwrap().count_parameters();
        assert_eq!(a, b);
    }

    #[test]
    fn rebuild_gives_same_inventory() {
        let spec = small(Preset::Add123);
        let a = Model::build_seeded(&spec, 1).unwrap();
        let b = Model::build_seeded(&spec, 2).unwrap();
        assert_eq!(a.inventory(), b.inventory());
        assert_ne!(a.params(), b.params());
    }

    #[test]
    fn outputs_are_probabilities_for_every_variant() {
        for p in Preset::ALL {
            let m = Model::build(&small(p)).unwrap();
            let x = Tensor::zeros(Shape::planar(2, 32, 32, 4));
            let y = m.forward(&x).unwrap();
            assert_eq!(y.shape(), Shape::planar(2, 32, 32, 1), "{p}");
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn wrong_input_is_rejected() {
        let m = Model::build(&small(Preset::SeAdd23)).unwrap();
        assert!(m.forward(&Tensor::zeros(Shape::planar(1, 32, 32, 3))).is_err());
        assert!(m.forward(&Tensor::zeros(Shape::planar(1, 16, 32, 4))).is_err());
    }

    #[test]
    fn foreign_tape_is_rejected() {
        let a = Model::build(&small(Preset::Add1)).unwrap();
        let b = Model::build(&small(Preset::Add1)).unwrap();
        let mut tape = b.tape(Mode::Eval, 0);
        let x = tape.input(Tensor::zeros(Shape::planar(1, 32, 32, 4)));
        assert!(a.trace(&mut tape, x).is_err());
    }

    #[test]
    fn running_stats_move_towards_batch() {
        let mut m = Model::build(&small(Preset::Unet2dTransform)).unwrap();
        let x = Tensor::filled(Shape::planar(1, 32, 32, 4), 1.0);
        let updates = {
            let mut tape = m.tape(Mode::Train, 0);
            let v = tape.input(x);
            m.trace(&mut tape, v).unwrap();
            tape.into_stat_updates()
        };
        assert!(!updates.is_empty());
        let id = updates[0].moving_var;
        let before = m.params().data(id)[0];
        m.apply_stat_updates(&updates);
        let after = m.params().data(id)[0];
        let expect = 0.99 * before + 0.01 * updates[0].batch_var[0];
        assert!((after - expect).abs() < 1e-6);
    }
}
