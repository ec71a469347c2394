#include "harakat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "harakat/fusion.hpp"

namespace harakat {

GradCheckOptions GradCheckOptions::for_real_type() {
  GradCheckOptions o;
  if constexpr (sizeof(Real) == sizeof(double)) {
    o.epsilon = 1e-6;
    o.tolerance = 1e-4;
  }
  return o;
}

GradCheckReport grad_check(const std::string& name, const std::function<Var()>& f,
                           std::vector<GradCheckInput> inputs, const GradCheckOptions& opts) {
  for (auto& in : inputs) in.var.zero_grad();
  backward(f());

  GradCheckReport report;
  report.name = name;
  report.tolerance = opts.tolerance;
  std::mt19937_64 rng(opts.seed);

  for (auto& in : inputs) {
    const Tensor analytic = in.var.has_grad() ? in.var.grad() : Tensor::zeros_like(in.var.value());
    Tensor& value = in.var.mutable_value();

    std::vector<std::size_t> idx(value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.max_elements_per_input > 0 && idx.size() > opts.max_elements_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_elements_per_input);
    }

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0, max_abs = 0.0;
    for (std::size_t i : idx) {
      const Real orig = value[i];
      const Real up = static_cast<Real>(orig + opts.epsilon);
      const Real down = static_cast<Real>(orig - opts.epsilon);
      value[i] = up;
      const double fp = f().value()[0];
      value[i] = down;
      const double fm = f().value()[0];
      value[i] = orig;
      const double numeric = (fp - fm) / (static_cast<double>(up) - static_cast<double>(down));
      const double a = analytic[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      max_abs = std::max(max_abs, std::abs(a - numeric));
    }

    InputGradError err;
    err.name = in.name;
    err.checked = idx.size();
    err.max_abs_error = max_abs;
    const double scale = std::sqrt(std::max(a2, n2));
    // All-zero gradients on both sides compare absolutely.
    err.rel_error = scale > 1e-12 ? std::sqrt(diff2) / scale : std::sqrt(diff2);
    report.max_rel_error = std::max(report.max_rel_error, err.rel_error);
    report.inputs.push_back(err);
    in.var.zero_grad();
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

// ---------------------------------------------------------------------------
// Registered suite

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  return normal_init(std::move(shape), rng, stddev);
}

/// Scalarizes an output with fixed random weights so every output element
/// contributes a distinct gradient.
std::function<Var()> projected(std::function<Var()> out, std::mt19937_64& rng) {
  auto weights = std::make_shared<Tensor>();
  return [out = std::move(out), weights, seed = rng()]() {
    Var y = out();
    if (weights->shape() != y.shape()) {
      std::mt19937_64 r(seed);
      *weights = random_tensor(y.shape(), r);
    }
    return ops::sum(ops::mul(y, Var::constant(*weights)));
  };
}

/// Random values for every parameter; norm gains stay near 1 so attention
/// inputs keep unit scale and the softmax is far from uniform.
void randomize(const ParameterList& params, std::mt19937_64& rng, double stddev) {
  for (Parameter* p : params) {
    Tensor t = random_tensor(p->value().shape(), rng, stddev);
    if (p->name().ends_with(".gain")) {
      for (auto& v : t.values()) v += Real(1);
    }
    p->mutable_value() = std::move(t);
  }
}

std::vector<GradCheckInput> named(const ParameterList& params) {
  std::vector<GradCheckInput> out;
  for (Parameter* p : params) out.push_back({p->name(), p->var()});
  return out;
}

std::vector<GradCheckInput> with(std::vector<GradCheckInput> a, GradCheckInput extra) {
  a.insert(a.begin(), std::move(extra));
  return a;
}

}  // namespace

std::vector<GradCheckReport> run_layer_grad_checks(const GradCheckOptions& opts) {
  std::vector<GradCheckReport> reports;
  std::mt19937_64 rng(1234);
  ForwardContext eval;

  {
    Linear lin("linear", 3, 2, rng);
    Var x = Var::leaf(random_tensor({4, 3}, rng));
    ParameterList ps;
    lin.collect(ps);
    reports.push_back(grad_check("linear", projected([&] { return lin.forward(x); }, rng),
                                 with(named(ps), {"x", x}), opts));
  }
  {
    LayerNorm ln("layer_norm", 8);
    ln.gain.mutable_value() = random_tensor({8}, rng);
    ln.shift.mutable_value() = random_tensor({8}, rng);
    Var x = Var::leaf(random_tensor({4, 8}, rng));
    ParameterList ps;
    ln.collect(ps);
    reports.push_back(grad_check("layer_norm", projected([&] { return ln.forward(x); }, rng),
                                 with(named(ps), {"x", x}), opts));
  }
  {
    FeedForward ffn("feed_forward", 8, 32, rng);
    ParameterList ps;
    ffn.collect(ps);
    randomize(ps, rng, 0.3);
    Var x = Var::leaf(random_tensor({4, 8}, rng));
    reports.push_back(grad_check("feed_forward", projected([&] { return ffn.forward(x); }, rng),
                                 with(named(ps), {"x", x}), opts));
  }
  {
    MultiHeadAttention mha("self_attention", 8, 2, rng);
    ParameterList ps;
    mha.collect(ps);
    randomize(ps, rng, 0.3);
    Var x = Var::leaf(random_tensor({4, 8}, rng));
    const std::uint8_t keys[] = {1, 1, 1, 0};
    const auto mask = AttentionMask::from_key_validity(4, keys);
    reports.push_back(grad_check("self_attention",
                                 projected([&] { return mha.forward(x, x, mask); }, rng),
                                 with(named(ps), {"x", x}), opts));
  }
  {
    MultiHeadAttention mha("cross_attention", 8, 2, rng);
    ParameterList ps;
    mha.collect(ps);
    randomize(ps, rng, 0.3);
    Var q = Var::leaf(random_tensor({4, 8}, rng));
    Var mem = Var::leaf(random_tensor({6, 8}, rng));
    const auto mask = AttentionMask::all(4, 6);
    auto inputs = with(named(ps), {"memory", mem});
    inputs.insert(inputs.begin(), {"queries", q});
    reports.push_back(grad_check("cross_attention",
                                 projected([&] { return mha.forward(q, mem, mask); }, rng),
                                 std::move(inputs), opts));
  }
  for (auto [d, heads, T] : {std::tuple{4, 1, 3}, std::tuple{8, 2, 4}}) {
    TransformerBlock block("block", d, heads, rng);
    ParameterList ps;
    block.collect(ps);
    randomize(ps, rng, 0.3);
    Var x = Var::leaf(random_tensor({static_cast<std::size_t>(T), static_cast<std::size_t>(d)}, rng));
    const auto mask = AttentionMask::all(T, T);
    reports.push_back(grad_check("transformer_block_d" + std::to_string(d),
                                 projected([&] { return block.forward(x, mask, eval); }, rng),
                                 with(named(ps), {"x", x}), opts));
  }
  {
    Embedding emb("embedding", 6, 8, rng);
    const std::vector<int> ids = {1, 4, 4, 0};
    ParameterList ps;
    emb.collect(ps);
    reports.push_back(grad_check("embedding", projected([&] { return emb.forward(ids); }, rng),
                                 named(ps), opts));
  }
  {
    Conv1d conv("conv1d_stride2", 3, 4, 3, 2, 1, rng);
    ParameterList ps;
    conv.collect(ps);
    randomize(ps, rng, 0.3);
    Var x = Var::leaf(random_tensor({10, 3}, rng));
    reports.push_back(grad_check("conv1d",
                                 projected([&] { return ops::gelu(conv.forward(x)); }, rng),
                                 with(named(ps), {"x", x}), opts));
  }
  {
    Linear proj("projection", 8, 6, rng);
    ParameterList ps;
    proj.collect(ps);
    randomize(ps, rng, 0.3);
    Var frames = Var::leaf(random_tensor({10, 8}, rng));
    reports.push_back(grad_check(
        "downsample_projection",
        projected([&] { return proj.forward(downsample_speech(frames, 5)); }, rng),
        with(named(ps), {"frames", frames}), opts));
  }
  {
    Var logits = Var::leaf(random_tensor({4, 15}, rng));
    const std::vector<int> labels = {3, 0, 14, -100};
    const std::vector<std::uint8_t> mask = {1, 1, 1, 0};
    reports.push_back(grad_check(
        "cross_entropy",
        [&] { return ops::cross_entropy_sum(logits, labels, mask); }, {{"logits", logits}}, opts));
  }

  // Full models at toy scale.
  ModelConfig cfg;
  cfg.vocab_size = 6;
  cfg.d_text = cfg.d_speech = 8;
  cfg.text_layers = cfg.speech_layers = 2;
  cfg.n_heads_text = cfg.n_heads_speech = cfg.fusion_heads = 2;
  cfg.mel_frames = 30;
  cfg.pool_factor = 5;
  cfg.max_text_len = 16;
  cfg.dropout = 0.0;
  cfg.init_seed = 99;

  MelSpectrogram mel(cfg.mel_bins, cfg.mel_frames);
  {
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (auto& v : mel.values()) v = d(rng);
  }
  const std::vector<int> ids = {2, 5, 3, 0};
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0};

  for (FusionMode mode : {FusionMode::kEarly, FusionMode::kCrossAttention}) {
    cfg.fusion = mode;
    auto model = std::make_unique<FusionModel>(cfg);
    // Unit-scale activations keep the softmax away from uniform so that
    // query and key gradients stand well above finite-difference noise.
    // Default init (std 0.02) scaled to std 0.8: unit-scale activations keep
    // the softmax away from uniform so query and key gradients stand well
    // above finite-difference noise.
    for (Parameter* p : model->parameters()) {
      if (p->name().ends_with(".weight") || p->name().ends_with(".table")) {
        for (auto& v : p->mutable_value().values()) v *= Real(40);
      }
    }
    FusionModel& m = *model;
    reports.push_back(grad_check(
        std::string("fusion_") + std::string(to_string(mode)),
        projected([&] { return m.forward(ids, mask, &mel, eval); }, rng), named(m.parameters()),
        opts));
    if (mode == FusionMode::kEarly) {
      reports.push_back(grad_check(
          "text_encoder",
          projected([&] { return m.text_encoder().encode(ids, mask, eval).states; }, rng),
          named([&] { ParameterList ps; for (Parameter* p : m.parameters()) if (p->name().starts_with("text.")) ps.push_back(p); return ps; }()),
          opts));
      reports.push_back(grad_check(
          "speech_encoder",
          projected([&] { return m.speech_encoder().encode(mel, eval); }, rng),
          named(m.speech_encoder_parameters()), opts));
    }
  }
  return reports;
}

}  // namespace harakat
