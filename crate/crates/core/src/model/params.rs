use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ModelConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearP {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct NormP {
    pub g: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockP {
    pub ln1: NormP,
    pub qkv: LinearP,
    pub proj: LinearP,
    pub ln2: NormP,
    pub fc: LinearP,
    pub out: LinearP,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    pub patch_embed: LinearP,
    pub patch_pos: usize,
    pub patch_blocks: Vec<BlockP>,
    pub patch_ln: NormP,
    pub char_embed: usize,
    pub char_pos: usize,
    pub char_blocks: Vec<BlockP>,
    pub char_ln: NormP,
    pub head: LinearP,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        let off = self.total;
        self.total += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo { name, offset: off, shape });
        off
    }

    fn linear(&mut self, name: &str, n_in: usize, n_out: usize) -> LinearP {
        LinearP {
            w: self.add(format!("{name}.w"), vec![n_in, n_out]),
            b: self.add(format!("{name}.b"), vec![n_out]),
            n_in,
            n_out,
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> NormP {
        NormP {
            g: self.add(format!("{name}.g"), vec![dim]),
            b: self.add(format!("{name}.b"), vec![dim]),
        }
    }

    fn block(&mut self, name: &str, h: usize) -> BlockP {
        BlockP {
            ln1: self.norm(&format!("{name}.ln1"), h),
            qkv: self.linear(&format!("{name}.attn.qkv"), h, 3 * h),
            proj: self.linear(&format!("{name}.attn.proj"), h, h),
            ln2: self.norm(&format!("{name}.ln2"), h),
            fc: self.linear(&format!("{name}.mlp.fc"), h, 4 * h),
            out: self.linear(&format!("{name}.mlp.out"), 4 * h, h),
        }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let h = c.hidden;
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let patch_embed = b.linear("patch.embed", c.patch_size * c.char_vocab, h);
        let patch_pos = b.add("patch.pos".into(), vec![c.context_patches, h]);
        let patch_blocks = (0..c.patch_layers).map(|i| b.block(&format!("patch.h{i}"), h)).collect();
        let patch_ln = b.norm("patch.ln_f", h);
        let char_embed = b.add("char.embed".into(), vec![c.char_vocab, h]);
        let char_pos = b.add("char.pos".into(), vec![c.patch_size, h]);
        let char_blocks = (0..c.char_layers).map(|i| b.block(&format!("char.h{i}"), h)).collect();
        let char_ln = b.norm("char.ln_f", h);
        let head = b.linear("char.head", h, c.char_vocab);
        Layout {
            tensors: b.tensors,
            total: b.total,
            patch_embed,
            patch_pos,
            patch_blocks,
            patch_ln,
            char_embed,
            char_pos,
            char_blocks,
            char_ln,
            head,
        }
    }

    /// Which parameters receive weight decay: matrices, not biases or norms.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for t in &self.tensors {
            if t.shape.len() == 2 {
                mask[t.offset..t.offset + t.len()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }
}

/// GPT-2 style initialisation: N(0, 0.02) weights, residual projections
/// scaled by 1/sqrt(2·layers), zero biases, unit norm gains.
pub fn init_params(c: &ModelConfig, layout: &Layout) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut data = vec![0.0; layout.total];
    for t in &layout.tensors {
        let slice = &mut data[t.offset..t.offset + t.len()];
        if t.name.ends_with(".g") {
            slice.iter_mut().for_each(|x| *x = 1.0);
        } else if t.shape.len() == 2 {
            let layers = if t.name.starts_with("patch.") { c.patch_layers } else { c.char_layers };
            let std = if t.name.ends_with("attn.proj.w") || t.name.ends_with("mlp.out.w") {
                0.02 / ((2 * layers.max(1)) as f64).sqrt()
            } else {
                0.02
            };
            slice.iter_mut().for_each(|x| *x = std * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        }
    }
    data
}
