use super::cell::{cell_step, ConvLstmCell, GATES};
use crate::error::{CoreError, Result};
use dvfcast_autodiff::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

/// Displacements (voxels) are divided by this before entering the network.
pub const DEFAULT_DVF_SCALE: f64 = 10.0;

const CELL_NAMES: [&str; 6] = ["enc1", "enc2", "enc3", "dec1", "dec2", "dec3"];

/// What a sequence frame holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Three displacement components (z, y, x).
    Dvf,
    /// Intensity plus tumour segmentation.
    Image,
}

impl Mode {
    pub fn channels(self) -> usize {
        match self {
            Mode::Dvf => 3,
            Mode::Image => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dvf => "dvf",
            Mode::Image => "image",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dvf" => Ok(Mode::Dvf),
            "image" => Ok(Mode::Image),
            other => Err(CoreError::Config(format!("unknown mode `{other}` (expected dvf or image)"))),
        }
    }
}

/// Everything needed to rebuild the network's parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub mode: Mode,
    pub skip: bool,
    /// Hidden channels at full, half and quarter resolution.
    pub hidden: [usize; 3],
    pub kernel: usize,
    /// Predict the change from the current frame instead of the frame itself.
    pub residual: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            mode: Mode::Dvf,
            skip: true,
            hidden: [16, 32, 64],
            kernel: 3,
            residual: false,
        }
    }
}

impl Architecture {
    pub fn channels(&self) -> usize {
        self.mode.channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return Err(CoreError::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.hidden.contains(&0) {
            return Err(CoreError::Config("hidden channel counts must be positive".into()));
        }
        Ok(())
    }

    fn cells(&self) -> [ConvLstmCell; 6] {
        let [h1, h2, h3] = self.hidden;
        let skip = |c: usize| if self.skip { c } else { 0 };
        let io = [
            (self.channels(), h1),
            (h1, h2),
            (h2, h3),
            (h3, h3),
            (h3 + skip(h2), h2),
            (h2 + skip(h1), h1),
        ];
        let mut out = [ConvLstmCell {
            input: 0,
            hidden: 0,
            kernel: self.kernel,
            offset: 0,
        }; 6];
        for (k, (input, hidden)) in io.into_iter().enumerate() {
            out[k] = ConvLstmCell {
                input,
                hidden,
                kernel: self.kernel,
                offset: 8 * k,
            };
        }
        out
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (cell, name) in self.cells().iter().zip(CELL_NAMES) {
            for gate in GATES {
                out.push((format!("{name}.w_{gate}"), cell.weight_shape().to_vec()));
            }
            for gate in GATES {
                out.push((format!("{name}.b_{gate}"), vec![cell.hidden]));
            }
        }
        let (h1, k, c) = (self.hidden[0], self.kernel, self.channels());
        out.push(("head1.w".into(), vec![h1, h1, k, k]));
        out.push(("head1.b".into(), vec![h1]));
        out.push(("head2.w".into(), vec![c, h1, k, k]));
        out.push(("head2.b".into(), vec![c]));
        out
    }
}

/// Recurrent `(H, C)` pairs for the six cells, encoder first.
#[derive(Debug, Clone, Copy)]
pub struct State {
    pub h: [Var; 6],
    pub c: [Var; 6],
}

/// Network parameters registered on one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

/// The encoder-decoder: three ConvLSTM cells with max pooling between them,
/// three more with upsampling, then a `tanh` convolution and a linear one.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqNet {
    arch: Architecture,
    scale: f64,
    cells: [ConvLstmCell; 6],
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Seq2SeqNet {
    /// Xavier-uniform kernels, zero biases except forget gates at 1.
    pub fn new(arch: Architecture, scale: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in arch.layout() {
            let t = if shape.len() == 4 {
                let k2 = shape[2] * shape[3];
                let bound = (6.0 / ((shape[0] + shape[1]) * k2) as f64).sqrt();
                Tensor::from_fn(&shape, |_| rng.gen_range(-bound..=bound))
            } else if name.ends_with(".b_f") {
                Tensor::ones(&shape)
            } else {
                Tensor::zeros(&shape)
            };
            names.push(name);
            params.push(t);
        }
        Self::from_parts(arch, scale, names, params)
    }

    /// Reassembles a network, checking names and shapes against `arch`.
    pub fn from_parts(arch: Architecture, scale: f64, names: Vec<String>, params: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(CoreError::Config(format!("normalisation scale must be positive, got {scale}")));
        }
        let layout = arch.layout();
        if layout.len() != params.len() || names.len() != params.len() {
            return Err(CoreError::Length {
                what: "network parameters",
                expected: layout.len(),
                found: params.len(),
            });
        }
        for ((name, shape), (n, p)) in layout.iter().zip(names.iter().zip(&params)) {
            if name != n || p.shape() != shape.as_slice() {
                return Err(CoreError::Format(format!(
                    "parameter `{n}` {:?} does not match `{name}` {shape:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self {
            arch,
            scale,
            cells: arch.cells(),
            names,
            params,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn cell(&self, k: usize) -> &ConvLstmCell {
        &self.cells[k]
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.leaf(p.clone(), requires_grad)).collect(),
        }
    }

    /// Zero recurrent state for a `[batch, _, height, width]` input.
    pub fn zero_state(&self, g: &mut Graph, batch: usize, height: usize, width: usize) -> Result<State> {
        check_extents(height, width)?;
        let mut h = Vec::with_capacity(6);
        let mut c = Vec::with_capacity(6);
        for (k, cell) in self.cells.iter().enumerate() {
            let div = [1, 2, 4, 4, 2, 1][k];
            let shape = [batch, cell.hidden, height / div, width / div];
            h.push(g.constant(Tensor::zeros(&shape)));
            c.push(g.constant(Tensor::zeros(&shape)));
        }
        Ok(State {
            h: h.try_into().expect("six cells"),
            c: c.try_into().expect("six cells"),
        })
    }

    /// Predicts the next normalised frame from `x` and advances the state.
    pub fn forward_step(&self, g: &mut Graph, bound: &Bound, x: Var, state: &State) -> Result<(Var, State)> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.arch.channels() {
            return Err(CoreError::Config(format!(
                "expected input [batch, {}, height, width], got {shape:?}",
                self.arch.channels()
            )));
        }
        check_extents(shape[2], shape[3])?;
        let mut next = *state;
        let mut run = |g: &mut Graph, k: usize, input: Var| -> Result<Var> {
            let cell = &self.cells[k];
            let p = &bound.vars[cell.offset..cell.offset + 8];
            let (h, c) = cell_step(g, cell, p, input, state.h[k], state.c[k])?;
            next.h[k] = h;
            next.c[k] = c;
            Ok(h)
        };
        let e1 = run(g, 0, x)?;
        let p1 = g.maxpool2x2(e1)?;
        let e2 = run(g, 1, p1)?;
        let p2 = g.maxpool2x2(e2)?;
        let e3 = run(g, 2, p2)?;
        let d1 = run(g, 3, e3)?;
        let mut u = g.upsample2x(d1)?;
        if self.arch.skip {
            u = g.concat_channels(&[u, e2])?;
        }
        let d2 = run(g, 4, u)?;
        let mut u = g.upsample2x(d2)?;
        if self.arch.skip {
            u = g.concat_channels(&[u, e1])?;
        }
        let d3 = run(g, 5, u)?;
        let head = &bound.vars[48..];
        let a = g.conv2d(d3, head[0], head[1])?;
        let a = g.tanh(a);
        let mut y = g.conv2d(a, head[2], head[3])?;
        if self.arch.residual {
            y = g.add(y, x)?;
        }
        Ok((y, next))
    }
}

fn check_extents(height: usize, width: usize) -> Result<()> {
    if !height.is_multiple_of(4) || !width.is_multiple_of(4) || height == 0 || width == 0 {
        return Err(CoreError::Config(format!(
            "slice extents {height}x{width} must be positive multiples of 4; pad the data at ingestion"
        )));
    }
    Ok(())
}
