#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "harakat/checkpoint.hpp"
#include "harakat/errors.hpp"
#include "harakat/training.hpp"
#include "support.hpp"

using namespace harakat;
using namespace harakat::testing;

namespace {

constexpr double kOptTol = sizeof(Real) == 8 ? 1e-7 : 2e-6;

struct Corpus {
  TempDir dir{"train"};
  CharVocab vocab;
  FeatureConfig features;
  std::vector<Example> examples;
};

std::unique_ptr<Corpus> small_corpus(int n, std::uint64_t seed = 5) {
  auto c = std::make_unique<Corpus>();
  c->features.fixed_seconds = 0.4;
  SynthOptions opts;
  opts.seconds = 0.4;
  const auto manifest = write_synth_corpus(synth_toy_corpus(n, seed, opts), c->dir.path());
  const auto records = load_manifest(manifest);
  c->vocab = build_vocab(records);
  c->examples = prepare_examples(records, c->vocab, c->features);
  return c;
}

ModelConfig small_model(const Corpus& c, FusionMode mode = FusionMode::kEarly) {
  ModelConfig m = ModelConfig::toy(c.vocab.size());
  m.fusion = mode;
  m.d_text = m.d_speech = 16;
  m.mel_frames = c.features.n_frames();
  m.pool_factor = 4;
  m.init_seed = 3;
  return m;
}

TrainConfig small_train() {
  TrainConfig t;
  t.batch_size = 4;
  t.optimizer.lr = 3e-3;
  t.epochs_phase1 = 1;
  t.epochs_phase2 = 1;
  t.seed = 11;
  return t;
}

std::vector<Tensor> snapshot(const ParameterList& params) {
  std::vector<Tensor> out;
  for (const Parameter* p : params) out.push_back(p->value());
  return out;
}

bool all_equal(const ParameterList& params, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(params[i]->value() == values[i])) return false;
  }
  return true;
}

bool none_equal(const ParameterList& params, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value() == values[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("masked cross entropy") {
  SUBCASE("uniform logits give ln 15") {
    const Tensor z({4, 15}, Real(0));
    const std::vector<int> labels = {0, 3, 7, 14};
    const std::vector<std::uint8_t> mask(4, 1);
    CHECK(masked_cross_entropy(Var::constant(z), labels, mask).value()[0] ==
          doctest::Approx(std::log(15.0)).epsilon(1e-6));
  }
  SUBCASE("a dominant correct logit gives ~0") {
    Tensor z({1, 15}, Real(0));
    z.at(0, 5) = 1000;
    const std::vector<int> labels = {5};
    const std::vector<std::uint8_t> mask = {1};
    CHECK(masked_cross_entropy(Var::constant(z), labels, mask).value()[0] < 1e-6);
  }
  SUBCASE("mean over valid rows, labels at masked rows ignored") {
    std::mt19937_64 rng(1);
    const Tensor z = random_tensor({3, 15}, rng, 3.0);
    const std::vector<std::uint8_t> mask = {1, 0, 1};
    const std::vector<int> a = {2, 9, 4}, b = {2, 13, 4};
    double ref = 0;
    for (std::size_t r : {0u, 2u}) {
      double s = 0;
      for (std::size_t c = 0; c < 15; ++c) s += std::exp(static_cast<double>(z.at(r, c)));
      ref += (std::log(s) - z.at(r, a[r])) / 2;
    }
    const double la = masked_cross_entropy(Var::constant(z), a, mask).value()[0];
    CHECK(la == doctest::Approx(ref).epsilon(1e-6));
    CHECK(la == masked_cross_entropy(Var::constant(z), b, mask).value()[0]);
  }
  SUBCASE("errors") {
    const Tensor z({2, 15}, Real(0));
    const std::vector<int> labels = {1, 1};
    CHECK_THROWS_AS(masked_cross_entropy(Var::constant(z), labels, std::vector<std::uint8_t>{0, 0}),
                    std::invalid_argument);
    const std::vector<int> bad = {15, 1};
    CHECK_THROWS(masked_cross_entropy(Var::constant(z), bad, std::vector<std::uint8_t>{1, 1}));
  }
}

TEST_CASE("AdamW") {
  SUBCASE("a zero gradient with no weight decay leaves the parameter alone") {
    Parameter p("p", Tensor({3}, {1, -2, 3}));
    AdamW opt({&p}, {.lr = 0.1, .weight_decay = 0.0});
    p.grad() = Tensor({3}, Real(0));
    opt.step();
    CHECK(p.value() == Tensor({3}, {1, -2, 3}));
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    Parameter p("p", Tensor({2}, {0.5, 0.5}));
    AdamW opt({&p}, {.lr = 0.01, .weight_decay = 0.0});
    p.grad() = Tensor({2}, {3, -0.2});
    opt.step();
    CHECK(p.value()[0] == doctest::Approx(0.5 - 0.01).epsilon(1e-6));
    CHECK(p.value()[1] == doctest::Approx(0.5 + 0.01).epsilon(1e-6));
  }
  SUBCASE("five steps on theta^2 / 2 match a scalar reference") {
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
    Parameter p("p", Tensor({1}, {1.5}));
    AdamW opt({&p}, {lr, b1, b2, eps, wd});
    double theta = 1.5, m = 0, v = 0;
    for (int t = 1; t <= 5; ++t) {
      opt.zero_grad();
      backward(ops::scale(ops::sum(ops::mul(p.var(), p.var())), Real(0.5)));
      opt.step();
      const double g = theta;
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
      theta = theta - lr * mh / (std::sqrt(vh) + eps) - lr * wd * theta;
      CHECK(p.value()[0] == doctest::Approx(theta).epsilon(kOptTol));
    }
    CHECK(opt.slots()[0].t == 5);
  }
  SUBCASE("frozen or gradient-free parameters are skipped") {
    Parameter frozen("f", Tensor({1}, {1}), false);
    Parameter idle("i", Tensor({1}, {1}));
    AdamW opt({&frozen, &idle}, {.lr = 0.1});
    opt.step();
    CHECK(frozen.value()[0] == Real(1));
    CHECK(idle.value()[0] == Real(1));
    CHECK(opt.slots()[0].t == 0);
    CHECK(opt.slots()[1].t == 0);
  }
}

TEST_CASE("train config validation and granularity names") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  CHECK(t.optimizer.lr == 1e-5);
  CHECK(t.optimizer.weight_decay == 0.01);
  CHECK(t.batch_size == 32);
  t.speech_drop_prob = 1.5;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.epochs_phase1 = t.epochs_phase2 = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  CHECK(parse_drop_granularity("example") == DropGranularity::kExample);
  CHECK_THROWS_AS(parse_drop_granularity("token"), ConfigError);
}

TEST_CASE("speech drop coin frequency over 400 batches") {
  auto c = small_corpus(2);
  FusionModel model(small_model(*c));
  TrainConfig t = small_train();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    t.seed = seed;
    Trainer trainer(model, t);
    for (int i = 0; i < 400; ++i) trainer.draw_speech_drop();
    CHECK(trainer.state().drop_draws == 400);
    CHECK(trainer.empirical_drop_rate() >= 0.42);
    CHECK(trainer.empirical_drop_rate() <= 0.58);
  }
}

TEST_CASE("drop probabilities 0 and 1 route every example") {
  auto c = small_corpus(4);
  for (DropGranularity g : {DropGranularity::kBatch, DropGranularity::kExample}) {
    FusionModel model(small_model(*c));
    TrainConfig t = small_train();
    t.drop_granularity = g;
    t.speech_drop_prob = 1.0;
    Trainer always(model, t);
    const auto batches = always.epoch_batches(c->examples, 0);
    CHECK(always.step(batches[0]).speech_examples == 0);
    t.speech_drop_prob = 0.0;
    Trainer never(model, t);
    CHECK(never.step(batches[0]).speech_examples == batches[0].size());
  }
}

TEST_CASE("two-phase schedule freezes the speech encoder only in phase 1") {
  auto c = small_corpus(8);
  FusionModel model(small_model(*c));
  TrainConfig t = small_train();
  t.speech_drop_prob = 0.0;
  t.epochs_phase1 = 2;
  t.epochs_phase2 = 2;
  const auto speech = model.speech_encoder_parameters();
  const auto init_speech = snapshot(speech);
  const auto init_proj = snapshot({&model.projection().weight});
  Trainer trainer(model, t);
  for (Parameter* p : speech) CHECK_FALSE(p->trainable());
  std::vector<bool> frozen_after, changed_after;
  trainer.run(c->examples, {}, std::nullopt, nullptr, [&](const EpochLog& log) {
    frozen_after.push_back(all_equal(speech, init_speech));
    changed_after.push_back(none_equal(speech, init_speech));
    if (log.epoch == 0) CHECK_FALSE(all_equal({&model.projection().weight}, init_proj));
  });
  CHECK(frozen_after == std::vector<bool>{true, true, false, false});
  CHECK(changed_after[3]);
  for (Parameter* p : speech) CHECK(p->trainable());
  CHECK(trainer.state().epoch == 4);
}

TEST_CASE("p = 1 trains every non-speech parameter without touching speech") {
  auto c = small_corpus(4);
  FusionModel model(small_model(*c));
  TrainConfig t = small_train();
  t.speech_drop_prob = 1.0;
  t.epochs_phase1 = 0;
  t.epochs_phase2 = 1;
  const auto speech = model.speech_encoder_parameters();
  const auto before = snapshot(speech);
  Trainer trainer(model, t);
  trainer.run(c->examples, {});
  CHECK(all_equal(speech, before));
  CHECK(trainer.state().step > 0);
}

TEST_CASE("divergence guard aborts before any parameter moves") {
  auto c = small_corpus(4);
  FusionModel model(small_model(*c));
  Trainer trainer(model, small_train());
  const auto batches = trainer.epoch_batches(c->examples, 0);
  Parameter* victim = model.parameters().back();
  victim->mutable_value()[0] = std::numeric_limits<Real>::quiet_NaN();
  const auto params = model.parameters();
  const auto before = snapshot(params);
  CHECK_THROWS_AS(trainer.step(batches[0]), DivergenceError);
  for (std::size_t i = 0; i + 1 < params.size(); ++i) CHECK(params[i]->value() == before[i]);
  CHECK(trainer.state().step == 0);
}

TEST_CASE("epoch shuffles depend only on seed and epoch") {
  auto c = small_corpus(8);
  FusionModel model(small_model(*c));
  const Trainer a(model, small_train()), b(model, small_train());
  const auto order = [](const std::vector<Batch>& bs) {
    std::vector<std::size_t> out;
    for (const auto& batch : bs) out.insert(out.end(), batch.example_index.begin(), batch.example_index.end());
    return out;
  };
  CHECK(order(a.epoch_batches(c->examples, 1)) == order(b.epoch_batches(c->examples, 1)));
  CHECK(order(a.epoch_batches(c->examples, 0)) != order(a.epoch_batches(c->examples, 1)));
}

TEST_CASE("checkpoint: save, load, one step equals two uninterrupted steps bitwise") {
  auto c = small_corpus(8);
  for (FusionMode mode : {FusionMode::kEarly, FusionMode::kCrossAttention}) {
    CAPTURE(to_string(mode));
    const ModelConfig mc = small_model(*c, mode);
    TrainConfig t = small_train();
    t.epochs_phase1 = 0;  // joint phase so every tensor moves
    t.drop_granularity = DropGranularity::kExample;
    const CheckpointExtras extras{c->vocab, c->features};

    FusionModel straight(mc);
    Trainer ts(straight, t);
    const auto batches = ts.epoch_batches(c->examples, 0);
    ts.step(batches[0]);
    ts.step(batches[1]);

    TempDir ckpt("ckpt");
    {
      FusionModel first(mc);
      Trainer tf(first, t);
      tf.step(batches[0]);
      tf.state().batch_in_epoch = 1;
      save_checkpoint(ckpt.path(), first, &tf, extras);
    }
    CheckpointInfo info;
    auto resumed = load_model(ckpt.path(), &info);
    CHECK(info.model == mc);
    REQUIRE(info.train.has_value());
    CHECK(*info.train == t);
    CHECK(info.extras.vocab == c->vocab);
    Trainer tr(*resumed, *info.train);
    load_trainer_state(ckpt.path(), tr);
    CHECK(tr.state().step == 1);
    CHECK(tr.state().batch_in_epoch == 1);
    tr.step(batches[1]);

    const auto a = straight.parameters(), b = resumed->parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK_MESSAGE(a[i]->value() == b[i]->value(), a[i]->name());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(ts.optimizer().slots()[i].m == tr.optimizer().slots()[i].m);
      CHECK(ts.optimizer().slots()[i].t == tr.optimizer().slots()[i].t);
    }
    CHECK(ts.state().rng == tr.state().rng);
  }
}

TEST_CASE("run resumes mid-epoch from a checkpoint directory") {
  auto c = small_corpus(8);
  const ModelConfig mc = small_model(*c);
  TrainConfig t = small_train();
  const CheckpointExtras extras{c->vocab, c->features};

  FusionModel straight(mc);
  Trainer ts(straight, t);
  ts.run(c->examples, {});

  TempDir out("resume");
  {
    TrainConfig capped = t;
    capped.max_steps = 1;
    FusionModel first(mc);
    Trainer tf(first, capped);
    tf.run(c->examples, {}, out.path(), &extras);
  }
  CHECK(std::filesystem::exists(out / "latest" / "manifest.json"));
  CHECK(std::filesystem::exists(out / "epoch-001" / "weights.bin"));
  CHECK(std::filesystem::exists(out / "metrics.jsonl"));
  auto resumed = load_model(out / "latest");
  Trainer tr(*resumed, t);
  load_trainer_state(out / "latest", tr);
  tr.run(c->examples, {});
  CHECK(tr.state().step == ts.state().step);
  const auto a = straight.parameters(), b = resumed->parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK_MESSAGE(a[i]->value() == b[i]->value(), a[i]->name());
}

TEST_CASE("checkpoint loading rejects mismatches") {
  auto c = small_corpus(2);
  const CheckpointExtras extras{c->vocab, c->features};
  FusionModel model(small_model(*c));
  TempDir dir("bad");
  save_checkpoint(dir.path(), model, nullptr, extras);
  CHECK_FALSE(std::filesystem::exists(dir / "optim.bin"));
  ModelConfig other = small_model(*c);
  other.d_text = other.d_speech = 8;
  FusionModel wrong(other);
  CHECK_THROWS_AS(load_weights(dir.path(), wrong), ConfigError);
  CHECK_THROWS_AS(read_checkpoint_info(dir / "missing"), ConfigError);
  std::filesystem::resize_file(dir / "weights.bin", 16);
  CHECK_THROWS_AS(load_weights(dir.path(), model), ConfigError);
}

TEST_CASE("config json round trips") {
  ModelConfig m = ModelConfig::toy(33);
  m.fusion = FusionMode::kCrossAttention;
  m.dropout = 0.25;
  CHECK(model_config_from_json(to_json(m)) == m);
  TrainConfig t = small_train();
  t.drop_granularity = DropGranularity::kExample;
  t.max_steps = 7;
  CHECK(train_config_from_json(to_json(t)) == t);
  FeatureConfig f;
  f.fixed_seconds = 2;
  CHECK(feature_config_from_json(to_json(f)).n_frames() == 200);
}
