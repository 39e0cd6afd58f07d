//! Machine-checkable verification of the approximations the library makes.
//!
//! Each check builds its own seeded fixtures, compares an implementation
//! path against an independent oracle, and returns a [`VerificationReport`]
//! of per-record rows with errors and tolerances. A report fails as soon as
//! one record exceeds its tolerance; the first violating record is named.
//!
//! The checks:
//!
//! * [`verify_activations`] — closed-form activation means against
//!   independent sigmoid/tanh/softplus/ReLU/leaky-ReLU references, with
//!   Monte-Carlo mean and standard-error columns for external plotting;
//! * [`verify_marginals`] — feed-forward against enumeration on seeded
//!   binary networks across weight scales, checking that the linearization
//!   error shrinks with the scale;
//! * [`verify_dropout_scaling`] — test-mode dropout against an explicitly
//!   weight-scaled graph (an algebraic identity), plus a Monte-Carlo check
//!   of the train-mode mean preactivation;
//! * [`verify_residual`] — refinement-module feed-forward against direct
//!   evaluation of the residual composition, including a nested instance;
//! * [`verify_gradients`] — reverse-mode gradients against central finite
//!   differences on deterministic and frozen-noise stochastic passes.

use std::io::Write;

use crate::distributions::{NodeDistribution, StdPolicy, SOFTPLUS_STD};
use crate::graph::{
    build_refinement, GraphSpec, InitScheme, LayerSpec, LayeredChainGraph, Submodule,
};
use crate::inference::{
    dropout_forward_train, exact_marginals, feed_forward, forward_with_mask,
    pcff_training_forward, DropoutMode, StochasticMask,
};
use crate::noise::{derive_rng, mix_seed, PassNoise};
use crate::scalar::Real;
use crate::training::{backward, LossSpec, Target};

/// One record of a verification check.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub values: Vec<String>,
    pub pass: bool,
}

/// Result of one check: a small table plus an overall verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub check: String,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub passed: bool,
}

impl VerificationReport {
    fn new(check: &str, columns: &[&str]) -> Self {
        Self {
            check: check.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            passed: true,
        }
    }

    fn push(&mut self, values: Vec<String>, pass: bool) {
        self.passed &= pass;
        self.rows.push(ReportRow { values, pass });
    }

    /// The first record that exceeded its tolerance, rendered for messages.
    pub fn first_failure(&self) -> Option<String> {
        self.rows.iter().position(|r| !r.pass).map(|i| {
            let row = &self.rows[i];
            let fields: Vec<String> = self
                .columns
                .iter()
                .zip(&row.values)
                .map(|(c, v)| format!("{c}={v}"))
                .collect();
            format!("record {i}: {}", fields.join(" "))
        })
    }

    /// `PASS <check> (<n> records)` or `FAIL <check>: <first violation>`.
    pub fn summary_line(&self) -> String {
        if self.passed {
            format!("PASS {} ({} records)", self.check, self.rows.len())
        } else {
            format!(
                "FAIL {}: {}",
                self.check,
                self.first_failure().unwrap_or_default()
            )
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},pass", self.columns.join(","))?;
        for row in &self.rows {
            writeln!(w, "{},{}", row.values.join(","), row.pass)?;
        }
        Ok(())
    }
}

fn fmt<F: Real>(v: F) -> String {
    format!("{v}")
}

/// Settings for [`verify_activations`].
#[derive(Clone, Debug)]
pub struct ActivationCheckOptions {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_step: f64,
    /// Monte-Carlo samples per grid point (the plotted scatter).
    pub mc_samples: usize,
    pub seed: u64,
    /// Replaces every tolerance when set (0 forces failure everywhere).
    pub tolerance_override: Option<f64>,
}

impl Default for ActivationCheckOptions {
    fn default() -> Self {
        Self {
            grid_min: -6.0,
            grid_max: 6.0,
            grid_step: 0.05,
            mc_samples: 200,
            seed: 0,
            tolerance_override: None,
        }
    }
}

struct ActivationCase<F> {
    family: &'static str,
    target: &'static str,
    dist: NodeDistribution<F>,
    reference: fn(f64) -> f64,
    /// Tolerance and the window where it is asserted.
    tolerance: f64,
    asserted: fn(f64) -> bool,
}

/// Compares the closed-form activation means against independent reference
/// implementations on a grid, with Monte-Carlo columns for plotting.
pub fn verify_activations<F: Real>(opts: &ActivationCheckOptions) -> VerificationReport {
    let cases: Vec<ActivationCase<F>> = vec![
        ActivationCase {
            family: "binary_0_1",
            target: "sigmoid",
            dist: NodeDistribution::sigmoid_binary(),
            reference: |e| 1.0 / (1.0 + (-e).exp()),
            tolerance: 1e-12,
            asserted: |_| true,
        },
        ActivationCase {
            family: "binary_-1_1",
            target: "tanh",
            dist: NodeDistribution::tanh_binary(),
            reference: f64::tanh,
            tolerance: 1e-12,
            asserted: |_| true,
        },
        ActivationCase {
            family: "rectified_softplus",
            target: "softplus",
            dist: NodeDistribution::softplus_rectified(),
            reference: |e| e.max(0.0) + (-e.abs()).exp().ln_1p(),
            tolerance: 0.05,
            asserted: |_| true,
        },
        ActivationCase {
            family: "rectified_relu",
            target: "relu",
            dist: NodeDistribution::relu_rectified(),
            reference: |e| e.max(0.0),
            tolerance: 0.05,
            asserted: |e| e == 0.0 || (1.0..=6.0).contains(&e.abs()),
        },
        ActivationCase {
            family: "rectified_leaky_relu_1_3",
            target: "leaky_relu_1_3",
            dist: NodeDistribution::leaky_relu_rectified(crate::scalar::real(1.0 / 3.0)),
            reference: |e| if e >= 0.0 { e } else { e / 3.0 },
            tolerance: 0.05,
            asserted: |e| (1.0..=6.0).contains(&e.abs()),
        },
    ];

    let mut report = VerificationReport::new(
        "activations",
        &[
            "family",
            "target",
            "e",
            "closed_form",
            "mc_mean",
            "mc_se",
            "target_value",
            "abs_error",
            "tolerance",
        ],
    );
    let steps = ((opts.grid_max - opts.grid_min) / opts.grid_step).round() as usize;
    for (case_idx, case) in cases.iter().enumerate() {
        let mut rng = derive_rng(&[mix_seed(&[opts.seed, 0xAC7]), case_idx as u64]);
        for k in 0..=steps {
            let e = opts.grid_min + k as f64 * opts.grid_step;
            let ef = crate::scalar::real::<F>(e);
            let closed = case.dist.activation_mean(&[ef]).unwrap()[0];
            let est = case
                .dist
                .mc_activation_estimate(&[ef], opts.mc_samples, &mut rng)
                .unwrap();
            let target = (case.reference)(e);
            let abs_error = (closed.to_f64().unwrap() - target).abs();
            let tol = opts
                .tolerance_override
                .unwrap_or(if (case.asserted)(e) { case.tolerance } else { f64::INFINITY });
            let pass = abs_error <= tol;
            report.push(
                vec![
                    case.family.to_string(),
                    case.target.to_string(),
                    format!("{e}"),
                    fmt(closed),
                    fmt(est.mean[0]),
                    est.std_error.map(|s| fmt(s[0])).unwrap_or_default(),
                    format!("{target}"),
                    format!("{abs_error}"),
                    format!("{tol}"),
                ],
                pass,
            );
        }
    }
    report
}

/// Settings for [`verify_marginals`].
#[derive(Clone, Debug)]
pub struct MarginalCheckOptions {
    /// Weight scales, largest first; the error must shrink along the list
    /// for at least 90% of seeds.
    pub scales: Vec<f64>,
    pub seeds: u64,
    /// Layer sizes of the seeded binary networks.
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    /// Error bound asserted at the smallest scale.
    pub small_scale_tolerance: f64,
    pub tolerance_override: Option<f64>,
}

impl Default for MarginalCheckOptions {
    fn default() -> Self {
        Self {
            scales: vec![1.0, 0.1, 0.01],
            seeds: 100,
            layer_sizes: vec![2, 2, 2],
            seed: 0,
            small_scale_tolerance: 1e-3,
            tolerance_override: None,
        }
    }
}

/// Feed-forward error against exact enumeration across weight scales: one
/// unit-scale weight draw per seed, rescaled per scale, so the comparison
/// isolates the linearization error.
pub fn verify_marginals<F: Real>(opts: &MarginalCheckOptions) -> VerificationReport {
    let mut columns: Vec<String> = vec!["seed".into()];
    for s in &opts.scales {
        columns.push(format!("err_scale_{s}"));
    }
    for w in opts.scales.windows(2) {
        columns.push(format!("improved_{}_to_{}", w[0], w[1]));
    }
    let mut report = VerificationReport::new("marginals", &[]);
    report.columns = columns;

    let layers: Vec<LayerSpec<F>> = opts
        .layer_sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if i == 0 {
                LayerSpec::input(format!("l{i}"), s, NodeDistribution::sigmoid_binary())
            } else {
                LayerSpec::hidden(format!("l{i}"), s, NodeDistribution::sigmoid_binary())
            }
        })
        .collect();
    let spec = GraphSpec::sequential(layers);
    let small_tol = opts
        .tolerance_override
        .unwrap_or(opts.small_scale_tolerance);

    let mut improved_counts = vec![0u64; opts.scales.len().saturating_sub(1)];
    for seed in 0..opts.seeds {
        let mut errs = Vec::with_capacity(opts.scales.len());
        let mut rng = derive_rng(&[mix_seed(&[opts.seed, 0x3A9]), seed]);
        let input: Vec<F> = (0..opts.layer_sizes[0])
            .map(|_| F::unit_uniform(&mut rng))
            .collect();
        for &scale in &opts.scales {
            let mut g = LayeredChainGraph::build(spec.clone()).unwrap();
            g.init_params(InitScheme::Normal { std: F::one() }, mix_seed(&[opts.seed, seed]));
            let scale_f = crate::scalar::real::<F>(scale);
            for ci in 0..g.connections().len() {
                let slot = g.connections()[ci].weight_slot();
                for v in g.params_mut().values_mut(slot) {
                    *v = *v * scale_f;
                }
            }
            let rep = exact_marginals(&g, &input).unwrap();
            errs.push(rep.max_abs_error.to_f64().unwrap());
        }
        let mut values = vec![seed.to_string()];
        for e in &errs {
            values.push(format!("{e}"));
        }
        let pass = *errs.last().unwrap() <= small_tol;
        for (k, w) in errs.windows(2).enumerate() {
            let improved = w[1] < w[0];
            if improved {
                improved_counts[k] += 1;
            }
            values.push(improved.to_string());
        }
        report.push(values, pass);
    }

    let needed = (opts.seeds as f64 * 0.9).ceil() as u64;
    for &count in &improved_counts {
        if count < needed {
            report.passed = false;
        }
    }
    report
}

/// Settings for [`verify_dropout_scaling`].
#[derive(Clone, Debug)]
pub struct DropoutCheckOptions {
    pub keep_prob: f64,
    pub inputs: usize,
    /// Monte-Carlo passes for the train-mode mean preactivation check.
    pub mc_passes: u64,
    pub seed: u64,
    pub tolerance_override: Option<f64>,
}

impl Default for DropoutCheckOptions {
    fn default() -> Self {
        Self {
            keep_prob: 0.5,
            inputs: 100,
            mc_passes: 100_000,
            seed: 0,
            tolerance_override: None,
        }
    }
}

/// Test-mode dropout equals the weight-scaled graph to 1e-12, and the mean
/// train-mode preactivation matches the test-mode one within 4 SE.
pub fn verify_dropout_scaling<F: Real>(opts: &DropoutCheckOptions) -> VerificationReport {
    let mut report = VerificationReport::new(
        "dropout_scaling",
        &["record", "value", "reference", "abs_error", "band"],
    );

    let keep = crate::scalar::real::<F>(opts.keep_prob);
    let mut g: LayeredChainGraph<F> = LayeredChainGraph::build(GraphSpec::sequential(vec![
        LayerSpec::input("in", 4, NodeDistribution::sigmoid_binary()),
        LayerSpec::hidden("h1", 5, NodeDistribution::sigmoid_binary()),
        LayerSpec::hidden("h2", 4, NodeDistribution::tanh_binary()),
        LayerSpec::hidden("out", 3, NodeDistribution::sigmoid_binary()),
    ]))
    .unwrap();
    g.init_params(InitScheme::Normal { std: crate::scalar::real(0.9) }, mix_seed(&[opts.seed, 0xD90]));
    g.augment_dropout(&["h1", "h2"], keep).unwrap();

    // Reference graph: annotations removed, annotated layers' outgoing
    // weights multiplied by the keep probability.
    let mut scaled = g.clone();
    scaled.clear_dropout();
    for id in ["h1", "h2"] {
        let l = scaled.layer_index(id).unwrap();
        let slots: Vec<usize> = scaled
            .connections()
            .iter()
            .filter(|c| c.parent() == l)
            .map(|c| c.weight_slot())
            .collect();
        for slot in slots {
            for v in scaled.params_mut().values_mut(slot) {
                *v = *v * keep;
            }
        }
    }

    let algebra_tol = opts.tolerance_override.unwrap_or(1e-12);
    let mut rng = derive_rng(&[mix_seed(&[opts.seed, 0xD91])]);
    for k in 0..opts.inputs {
        let input: Vec<F> = (0..4).map(|_| F::unit_uniform(&mut rng)).collect();
        let a = feed_forward(&g, &input, DropoutMode::Test).unwrap();
        let b = feed_forward(&scaled, &input, DropoutMode::Off).unwrap();
        let mut max_diff = 0.0f64;
        for (x, y) in a.q(3).iter().zip(b.q(3).iter()) {
            max_diff = max_diff.max((*x - *y).abs().to_f64().unwrap());
        }
        report.push(
            vec![
                format!("test_mode_vs_scaled_weights_input_{k}"),
                String::new(),
                String::new(),
                format!("{max_diff}"),
                format!("{algebra_tol}"),
            ],
            max_diff <= algebra_tol,
        );
    }

    // Train-mode mean of e^2 over Monte-Carlo masks against the test-mode
    // preactivation (exact in expectation because e is linear in the
    // indicators).
    let input: Vec<F> = (0..4).map(|_| F::unit_uniform(&mut rng)).collect();
    let test = feed_forward(&g, &input, DropoutMode::Test).unwrap();
    let dim = g.dim(2);
    let mut sums = vec![0.0f64; dim];
    let mut sums_sq = vec![0.0f64; dim];
    for pass in 0..opts.mc_passes {
        let (state, _) =
            dropout_forward_train(&g, &input, &PassNoise::new(mix_seed(&[opts.seed, 0xD92]), pass))
                .unwrap();
        for i in 0..dim {
            let v = state.e(2)[i].to_f64().unwrap();
            sums[i] += v;
            sums_sq[i] += v * v;
        }
    }
    let n = opts.mc_passes as f64;
    for i in 0..dim {
        let mean = sums[i] / n;
        let var = ((sums_sq[i] - n * mean * mean) / (n - 1.0)).max(0.0);
        let se = (var / n).sqrt();
        let reference = test.e(2)[i].to_f64().unwrap();
        let band = opts.tolerance_override.unwrap_or(4.0 * se + 1e-12);
        let err = (mean - reference).abs();
        report.push(
            vec![
                format!("train_mean_preactivation_h2_{i}"),
                format!("{mean}"),
                format!("{reference}"),
                format!("{err}"),
                format!("{band}"),
            ],
            err <= band,
        );
    }
    report
}

/// Settings for [`verify_residual`].
#[derive(Clone, Debug)]
pub struct ResidualCheckOptions {
    pub inputs: usize,
    pub seed: u64,
    pub tolerance_override: Option<f64>,
}

impl Default for ResidualCheckOptions {
    fn default() -> Self {
        Self {
            inputs: 100,
            seed: 0,
            tolerance_override: None,
        }
    }
}

/// Refinement-module feed-forward against direct evaluation of
/// `g(e_m + e_r(g(e_m)))`, plus a nested (depth-2) instance.
pub fn verify_residual<F: Real>(opts: &ResidualCheckOptions) -> VerificationReport {
    let mut report = VerificationReport::new(
        "residual",
        &["fragment", "input", "max_abs_diff", "tolerance"],
    );
    let tol = opts.tolerance_override.unwrap_or(1e-12);
    let tanh = NodeDistribution::<F>::tanh_binary();
    let width = 3usize;

    let base = Submodule::dense(
        LayerSpec::input("x0", width, tanh),
        LayerSpec::hidden("x1", width, tanh),
    );
    let refine = |dup: &str, out: &str| {
        Submodule::dense(
            LayerSpec::hidden(dup, width, tanh),
            LayerSpec::hidden(out, width, tanh),
        )
    };
    let inner = build_refinement(&base, &refine("d0", "o0")).unwrap();
    let outer = build_refinement(&inner, &refine("d1", "o1")).unwrap();

    let mut g1 = LayeredChainGraph::build(inner.into_graph_spec()).unwrap();
    g1.init_params(
        InitScheme::Normal { std: crate::scalar::real(0.7) },
        mix_seed(&[opts.seed, 0x4E5]),
    );
    let mut g2 = LayeredChainGraph::build(outer.into_graph_spec()).unwrap();
    g2.init_params(
        InitScheme::Normal { std: crate::scalar::real(0.7) },
        mix_seed(&[opts.seed, 0x4E6]),
    );

    let tanh_vec = |e: &[F]| -> Vec<F> { e.iter().map(|&v| v.tanh()).collect() };
    let matvec = |w: &[F], x: &[F], b: Option<&[F]>| -> Vec<F> {
        let mut out: Vec<F> = match b {
            Some(b) => b.to_vec(),
            None => vec![F::zero(); w.len() / x.len()],
        };
        crate::linalg::matvec_add(w, x, &mut out);
        out
    };

    let mut rng = derive_rng(&[mix_seed(&[opts.seed, 0x4E7])]);
    for k in 0..opts.inputs {
        let input: Vec<F> = (0..width)
            .map(|_| F::unit_uniform(&mut rng) * crate::scalar::real(2.0) - F::one())
            .collect();

        // Depth 1: q = g(e_m + W_r g(e_m)), e_m = W_m q0 + b.
        {
            let w_m = g1.params().values(g1.weight_slot_between("x0", "x1").unwrap());
            let b = g1.params().values(g1.bias_slot("x1").unwrap());
            let w_r = g1.params().values(g1.weight_slot_between("x1~", "x1").unwrap());
            let e_m = matvec(w_m, &input, Some(b));
            let residual = matvec(w_r, &tanh_vec(&e_m), None);
            let direct: Vec<F> = e_m
                .iter()
                .zip(&residual)
                .map(|(&a, &r)| (a + r).tanh())
                .collect();
            let state = feed_forward(&g1, &input, DropoutMode::Off).unwrap();
            let out = g1.layer_index("x1").unwrap();
            let mut max_diff = 0.0f64;
            for (a, b) in state.q(out).iter().zip(direct.iter()) {
                max_diff = max_diff.max((*a - *b).abs().to_f64().unwrap());
            }
            report.push(
                vec![
                    "depth1".into(),
                    k.to_string(),
                    format!("{max_diff}"),
                    format!("{tol}"),
                ],
                max_diff <= tol,
            );
        }

        // Depth 2: e_f = e_m + W_r0 g(e_m); q = g(e_f + W_r1 g(e_f)).
        {
            let w_m = g2.params().values(g2.weight_slot_between("x0", "x1").unwrap());
            let b = g2.params().values(g2.bias_slot("x1").unwrap());
            let w_r0 = g2.params().values(g2.weight_slot_between("x1~", "x1").unwrap());
            let w_r1 = g2
                .params()
                .values(g2.weight_slot_between("x1~~", "x1").unwrap());
            let e_m = matvec(w_m, &input, Some(b));
            let e_f: Vec<F> = e_m
                .iter()
                .zip(matvec(w_r0, &tanh_vec(&e_m), None).iter())
                .map(|(&a, &r)| a + r)
                .collect();
            let direct: Vec<F> = e_f
                .iter()
                .zip(matvec(w_r1, &tanh_vec(&e_f), None).iter())
                .map(|(&a, &r)| (a + r).tanh())
                .collect();
            let state = feed_forward(&g2, &input, DropoutMode::Off).unwrap();
            let out = g2.layer_index("x1").unwrap();
            let mut max_diff = 0.0f64;
            for (a, b) in state.q(out).iter().zip(direct.iter()) {
                max_diff = max_diff.max((*a - *b).abs().to_f64().unwrap());
            }
            report.push(
                vec![
                    "depth2_nested".into(),
                    k.to_string(),
                    format!("{max_diff}"),
                    format!("{tol}"),
                ],
                max_diff <= tol,
            );
        }
    }
    report
}

/// Settings for [`verify_gradients`].
#[derive(Clone, Debug)]
pub struct GradientCheckOptions {
    pub seeds: u64,
    pub step: f64,
    pub seed: u64,
    pub tolerance_override: Option<f64>,
}

impl Default for GradientCheckOptions {
    fn default() -> Self {
        Self {
            seeds: 10,
            step: 1e-5,
            seed: 0,
            tolerance_override: None,
        }
    }
}

/// Maximum relative error of `backward` against central finite differences
/// over every trainable parameter, replaying `mask` for each perturbation.
pub fn gradient_rel_error<F: Real>(
    graph: &mut LayeredChainGraph<F>,
    input: &[F],
    label: usize,
    loss: LossSpec,
    mask: &StochasticMask<F>,
    step: f64,
) -> f64 {
    let last = graph.layer_count() - 1;
    let h = crate::scalar::real::<F>(step);
    let state = forward_with_mask(graph, input, mask).unwrap();
    let target = Target::Class(label);
    let out_grad = loss
        .output_gradient(state.q(last), state.e(last), &target)
        .unwrap();
    let grads = backward(graph, &state, mask, out_grad).unwrap();

    let mut worst = 0.0f64;
    for slot in 0..graph.params().slot_count() {
        if !graph.params().is_trainable(slot) {
            continue;
        }
        for k in 0..graph.params().values(slot).len() {
            let orig = graph.params().values(slot)[k];
            graph.params_mut().values_mut(slot)[k] = orig + h;
            let sp = forward_with_mask(graph, input, mask).unwrap();
            let lp = loss
                .eval(sp.q(last), sp.e(last), &Target::Class(label))
                .unwrap()
                .to_f64()
                .unwrap();
            graph.params_mut().values_mut(slot)[k] = orig - h;
            let sm = forward_with_mask(graph, input, mask).unwrap();
            let lm = loss
                .eval(sm.q(last), sm.e(last), &Target::Class(label))
                .unwrap()
                .to_f64()
                .unwrap();
            graph.params_mut().values_mut(slot)[k] = orig;
            let fd = (lp - lm) / (2.0 * step);
            let an = grads.slot(slot)[k].to_f64().unwrap();
            let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Gradients against finite differences: a linear network (tight bound),
/// mixed smooth networks over several seeds, and a frozen-noise PCFF pass
/// on an all-continuous network.
pub fn verify_gradients<F: Real>(opts: &GradientCheckOptions) -> VerificationReport {
    let mut report = VerificationReport::new(
        "gradients",
        &["network", "seed", "max_rel_error", "tolerance"],
    );

    // Linear network: central differences are exact up to rounding.
    {
        let mut g: LayeredChainGraph<F> = LayeredChainGraph::build(GraphSpec::sequential(vec![
            LayerSpec::input("in", 3, NodeDistribution::identity_rectified(F::one())),
            LayerSpec::hidden("h", 3, NodeDistribution::identity_rectified(F::one())),
            LayerSpec::hidden("out", 2, NodeDistribution::identity_rectified(F::one())),
        ]))
        .unwrap();
        g.init_params(
            InitScheme::Normal { std: crate::scalar::real(0.5) },
            mix_seed(&[opts.seed, 0x96AD]),
        );
        let mask = StochasticMask::collapsed(&g);
        let err = gradient_rel_error(
            &mut g,
            &[crate::scalar::real(0.3), crate::scalar::real(-0.2), crate::scalar::real(0.8)],
            0,
            LossSpec::SquaredError,
            &mask,
            opts.step,
        );
        let tol = opts.tolerance_override.unwrap_or(1e-8);
        report.push(
            vec![
                "linear".into(),
                "0".into(),
                format!("{err}"),
                format!("{tol}"),
            ],
            err <= tol,
        );
    }

    let tol = opts.tolerance_override.unwrap_or(1e-4);
    for seed in 0..opts.seeds {
        let mut g: LayeredChainGraph<F> = LayeredChainGraph::build(GraphSpec::sequential(vec![
            LayerSpec::input("in", 3, NodeDistribution::sigmoid_binary()),
            LayerSpec::hidden("h1", 4, NodeDistribution::tanh_binary()),
            LayerSpec::hidden(
                "h2",
                4,
                NodeDistribution::RectifiedGaussian {
                    leak: crate::scalar::real(0.2),
                    std: StdPolicy::Constant { s: crate::scalar::real(SOFTPLUS_STD) },
                },
            ),
            LayerSpec::hidden("h3", 3, NodeDistribution::sigmoid_binary()),
            LayerSpec::hidden("out", 1, NodeDistribution::Multilabel { classes: 3 }),
        ]))
        .unwrap();
        g.init_params(
            InitScheme::Normal { std: crate::scalar::real(0.8) },
            mix_seed(&[opts.seed, 0x96AE, seed]),
        );
        let mut rng = derive_rng(&[mix_seed(&[opts.seed, 0x96AF]), seed]);
        let input: Vec<F> = (0..3).map(|_| F::unit_uniform(&mut rng)).collect();
        let mask = StochasticMask::collapsed(&g);
        let err = gradient_rel_error(
            &mut g,
            &input,
            (seed % 3) as usize,
            LossSpec::CrossEntropy,
            &mask,
            opts.step,
        );
        report.push(
            vec![
                "mixed_smooth".into(),
                seed.to_string(),
                format!("{err}"),
                format!("{tol}"),
            ],
            err <= tol,
        );
    }

    // PCFF with frozen noise: continuous nodes only are sampled.
    {
        let mut g: LayeredChainGraph<F> = LayeredChainGraph::build(GraphSpec::sequential(vec![
            LayerSpec::input("in", 2, NodeDistribution::sigmoid_binary()),
            LayerSpec::hidden("h1", 4, NodeDistribution::softplus_rectified()),
            LayerSpec::hidden("h2", 3, NodeDistribution::softplus_rectified()),
            LayerSpec::hidden("out", 1, NodeDistribution::Multilabel { classes: 2 }),
        ]))
        .unwrap();
        g.init_params(
            InitScheme::Normal { std: crate::scalar::real(0.7) },
            mix_seed(&[opts.seed, 0x96B0]),
        );
        let input = [crate::scalar::real(0.4), crate::scalar::real(0.6)];
        let (_, mask) = pcff_training_forward(
            &g,
            &input,
            F::one(),
            &PassNoise::new(mix_seed(&[opts.seed, 0x96B1]), 0),
            3,
        )
        .unwrap();
        let err = gradient_rel_error(&mut g, &input, 1, LossSpec::CrossEntropy, &mask, opts.step);
        report.push(
            vec![
                "pcff_frozen_noise".into(),
                "0".into(),
                format!("{err}"),
                format!("{tol}"),
            ],
            err <= tol,
        );
    }
    report
}

/// Runs every check with default settings and the given seed.
pub fn run_all<F: Real>(seed: u64) -> Vec<VerificationReport> {
    vec![
        verify_activations::<F>(&ActivationCheckOptions {
            seed,
            ..Default::default()
        }),
        verify_marginals::<F>(&MarginalCheckOptions {
            seed,
            ..Default::default()
        }),
        verify_dropout_scaling::<F>(&DropoutCheckOptions {
            seed,
            ..Default::default()
        }),
        verify_residual::<F>(&ResidualCheckOptions {
            seed,
            ..Default::default()
        }),
        verify_gradients::<F>(&GradientCheckOptions {
            seed,
            ..Default::default()
        }),
    ]
}
