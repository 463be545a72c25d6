use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "oistab", version, about = "Output-input stability and minimum-phase analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a model for well-formedness.
    Validate(Common),
    /// Relative degree verdict.
    Reldeg(ReldegArgs),
    /// Transmission zeros and minimum-phase verdict of a linear model.
    Zeros(Common),
    /// Linear normal form and zero-dynamics bound.
    Normalform(Common),
    /// Integrate one trajectory.
    Simulate(SimulateArgs),
    /// Symbolic output jets and their input dependence.
    Jets(JetsArgs),
    /// Check a stability bound on a seeded trajectory ensemble.
    Certify(CertifyArgs),
    /// Search for evidence against output-input stability.
    Falsify(FalsifyArgs),
    /// Grid check of a dissipation inequality.
    Lyapunov(LyapunovArgs),
    /// Compose gain functions from component bounds.
    Gains(GainsArgs),
    /// List the built-in models.
    CorpusList(Output),
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Built-in model key (see `corpus-list`).
    #[arg(long)]
    pub corpus: Option<String>,
    /// Model file: `.mat` for `A`/`B`/`C` blocks, otherwise the text format.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Output {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub output: Output,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReldegPath {
    Auto,
    Affine,
    General,
}

#[derive(Args, Debug)]
pub struct ReldegArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = ReldegPath::Auto)]
    pub path: ReldegPath,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Half-width of the sampled state box.
    #[arg(long = "box", default_value_t = 1.0)]
    pub box_radius: f64,
    /// Grid points per state axis.
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Initial state, comma separated (default: origin).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    /// Constant input, comma separated (default: zero).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "input")]
    pub u: Vec<f64>,
    /// JSON input signal file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Use the alternating switching schedule on channel 1.
    #[arg(long, conflicts_with_all = ["u", "input"])]
    pub switching: bool,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Also sample output jets up to this order.
    #[arg(long = "order", short = 'N')]
    pub order: Option<usize>,
    /// Write the trajectory as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct JetsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "order", short = 'N', default_value_t = 2)]
    pub order: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    OutputInput,
    Detectability,
    Iss,
    Ios,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub property: Property,
    /// Jet order `N`, or the detectability order.
    #[arg(long = "order", short = 'N', default_value_t = 1)]
    pub order: usize,
    /// Uniform detectability (no input term).
    #[arg(long)]
    pub uniform: bool,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 12.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Half-width of the initial-state box.
    #[arg(long = "box", default_value_t = 1.0)]
    pub box_radius: f64,
    #[arg(long, default_value_t = 1.0)]
    pub u_scale: f64,
    /// `a,p,lambda` for `beta(s, t) = a s^p e^(-lambda t)`.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    pub beta: Vec<f64>,
    /// Polynomial coefficients `c1,c2,...` of `gamma(s) = c1 s + c2 s^2 + ...`.
    #[arg(long, value_delimiter = ',', default_value = "1,1")]
    pub gamma: Vec<f64>,
    /// Input gain coefficients for non-uniform detectability.
    #[arg(long, value_delimiter = ',')]
    pub gamma_u: Vec<f64>,
    /// Extra evaluation windows for detectability bounds.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
}

#[derive(Args, Debug)]
pub struct FalsifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "order", short = 'N', default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 2000)]
    pub budget: usize,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct LyapunovArgs {
    #[command(flatten)]
    pub common: Common,
    /// Candidate `V(x)`.
    #[arg(long)]
    pub v: String,
    /// Coefficients of `alpha` in `dV <= -alpha(|x|) + chi(|y^N|)`.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    /// Coefficients of `chi`.
    #[arg(long, value_delimiter = ',')]
    pub chi: Vec<f64>,
    #[arg(long = "order", short = 'N', default_value_t = 0)]
    pub order: usize,
    /// Half-width of the state box.
    #[arg(long = "box", default_value_t = 2.0)]
    pub box_radius: f64,
    #[arg(long, default_value_t = 41)]
    pub points: usize,
    #[arg(long, default_value_t = 10.0)]
    pub u_box: f64,
    #[arg(long, default_value_t = 11)]
    pub u_points: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Composition {
    /// Output-input bound from relative-degree and detectability bounds.
    Detectability,
    /// Cascade of a detectable and a strongly minimum-phase system.
    Cascade,
    /// Three-system cascade.
    Cascade3,
}

#[derive(Args, Debug)]
pub struct GainsArgs {
    #[arg(long, value_enum)]
    pub composition: Composition,
    /// `a,p,lambda` used for every component class-KL gain.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    pub beta: Vec<f64>,
    /// Polynomial coefficients used for every component class-K gain.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub gamma: Vec<f64>,
    /// Evaluation points `s` for the composed gains.
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,10")]
    pub at: Vec<f64>,
    #[command(flatten)]
    pub output: Output,
}
