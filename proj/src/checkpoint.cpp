#include "harakat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "harakat/errors.hpp"

namespace harakat {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr int kFormatVersion = 1;

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path.string());
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return j;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

template <typename T>
T get(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("checkpoint field missing: ") + key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint field ") + key + ": " + e.what());
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field ") + key + ": " + e.what());
  }
}

// Appends tensors as f32 and records their manifest entries.
class BlobWriter {
 public:
  explicit BlobWriter(const fs::path& path) : os_(path, std::ios::binary) {
    if (!os_) throw Error("cannot write " + path.string());
  }

  json add(const std::string& name, const Tensor& t) {
    std::vector<float> buf(t.values().begin(), t.values().end());
    const std::size_t bytes = buf.size() * sizeof(float);
    os_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(bytes));
    json e = {{"name", name}, {"shape", t.shape()}, {"dtype", "f32"},
              {"offset", offset_}, {"length", bytes}};
    offset_ += bytes;
    return e;
  }

  void close() {
    os_.close();
    if (!os_) throw Error("write failed");
  }

 private:
  std::ofstream os_;
  std::size_t offset_ = 0;
};

std::vector<char> read_blob(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Copies one manifest entry into `dst`, checking name-independent metadata.
void read_entry(const json& e, const std::vector<char>& blob, Tensor& dst, const std::string& what) {
  const auto shape = get<Shape>(e, "shape");
  if (shape != dst.shape()) {
    throw ConfigError(what + ": stored shape " + shape_string(shape) + " but model expects " +
                      shape_string(dst.shape()));
  }
  if (get<std::string>(e, "dtype") != "f32") throw ConfigError(what + ": unsupported dtype");
  const auto offset = get<std::size_t>(e, "offset");
  const auto length = get<std::size_t>(e, "length");
  if (length != dst.size() * sizeof(float) || offset + length > blob.size()) {
    throw ConfigError(what + ": byte range out of bounds");
  }
  std::vector<float> buf(dst.size());
  std::memcpy(buf.data(), blob.data() + offset, length);
  for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<Real>(buf[i]);
}

}  // namespace

// ---------------------------------------------------------------------------

json to_json(const ModelConfig& c) {
  return {{"fusion", to_string(c.fusion)},
          {"vocab_size", c.vocab_size},
          {"n_classes", c.n_classes},
          {"d_text", c.d_text},
          {"text_layers", c.text_layers},
          {"n_heads_text", c.n_heads_text},
          {"d_speech", c.d_speech},
          {"speech_layers", c.speech_layers},
          {"n_heads_speech", c.n_heads_speech},
          {"fusion_heads", c.fusion_heads},
          {"pool_factor", c.pool_factor},
          {"max_text_len", c.max_text_len},
          {"mel_bins", c.mel_bins},
          {"mel_frames", c.mel_frames},
          {"dropout", c.dropout},
          {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.fusion = parse_fusion_mode(get<std::string>(j, "fusion"));
  c.vocab_size = get<int>(j, "vocab_size");
  c.n_classes = get<int>(j, "n_classes");
  c.d_text = get<int>(j, "d_text");
  c.text_layers = get<int>(j, "text_layers");
  c.n_heads_text = get<int>(j, "n_heads_text");
  c.d_speech = get<int>(j, "d_speech");
  c.speech_layers = get<int>(j, "speech_layers");
  c.n_heads_speech = get<int>(j, "n_heads_speech");
  c.fusion_heads = get<int>(j, "fusion_heads");
  c.pool_factor = get<int>(j, "pool_factor");
  c.max_text_len = get<int>(j, "max_text_len");
  c.mel_bins = get<int>(j, "mel_bins");
  c.mel_frames = get<int>(j, "mel_frames");
  c.dropout = get<double>(j, "dropout");
  c.init_seed = get<std::uint64_t>(j, "init_seed");
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr", c.optimizer.lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"weight_decay", c.optimizer.weight_decay},
          {"epochs_phase1", c.epochs_phase1},
          {"epochs_phase2", c.epochs_phase2},
          {"speech_drop_prob", c.speech_drop_prob},
          {"drop_granularity", to_string(c.drop_granularity)},
          {"augment", c.augment},
          {"seed", c.seed},
          {"max_steps", c.max_steps},
          {"keep_epoch_checkpoints", c.keep_epoch_checkpoints}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  maybe(j, "batch_size", c.batch_size);
  maybe(j, "lr", c.optimizer.lr);
  maybe(j, "beta1", c.optimizer.beta1);
  maybe(j, "beta2", c.optimizer.beta2);
  maybe(j, "eps", c.optimizer.eps);
  maybe(j, "weight_decay", c.optimizer.weight_decay);
  maybe(j, "epochs_phase1", c.epochs_phase1);
  maybe(j, "epochs_phase2", c.epochs_phase2);
  maybe(j, "speech_drop_prob", c.speech_drop_prob);
  if (j.contains("drop_granularity")) {
    c.drop_granularity = parse_drop_granularity(get<std::string>(j, "drop_granularity"));
  }
  maybe(j, "augment", c.augment);
  maybe(j, "seed", c.seed);
  maybe(j, "max_steps", c.max_steps);
  maybe(j, "keep_epoch_checkpoints", c.keep_epoch_checkpoints);
  c.validate();
  return c;
}

json to_json(const FeatureConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"n_fft", c.n_fft},
          {"hop", c.hop},                 {"n_mels", c.n_mels},
          {"f_min", c.f_min},             {"f_max", c.f_max},
          {"fixed_seconds", c.fixed_seconds}, {"log_floor", c.log_floor},
          {"dynamic_range", c.dynamic_range}};
}

FeatureConfig feature_config_from_json(const json& j) {
  FeatureConfig c;
  maybe(j, "sample_rate", c.sample_rate);
  maybe(j, "n_fft", c.n_fft);
  maybe(j, "hop", c.hop);
  maybe(j, "n_mels", c.n_mels);
  maybe(j, "f_min", c.f_min);
  maybe(j, "f_max", c.f_max);
  maybe(j, "fixed_seconds", c.fixed_seconds);
  maybe(j, "log_floor", c.log_floor);
  maybe(j, "dynamic_range", c.dynamic_range);
  return c;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const fs::path& dir, FusionModel& model, const Trainer* trainer,
                     const CheckpointExtras& extras) {
  fs::create_directories(dir);
  json manifest = {{"format", "harakat-checkpoint"},
                   {"version", kFormatVersion},
                   {"model_config", to_json(model.config())},
                   {"features", to_json(extras.features)}};

  BlobWriter weights(dir / "weights.bin");
  json entries = json::array();
  for (const Parameter* p : model.parameters()) entries.push_back(weights.add(p->name(), p->value()));
  weights.close();
  manifest["tensors"] = std::move(entries);

  if (trainer) {
    manifest["train_config"] = to_json(trainer->config());
    BlobWriter optim(dir / "optim.bin");
    json opt_entries = json::array();
    const auto& params = trainer->optimizer().parameters();
    const auto& slots = trainer->optimizer().slots();
    for (std::size_t k = 0; k < params.size(); ++k) {
      json m = optim.add(params[k]->name() + ".m", slots[k].m);
      json v = optim.add(params[k]->name() + ".v", slots[k].v);
      m["step"] = v["step"] = slots[k].t;
      opt_entries.push_back(std::move(m));
      opt_entries.push_back(std::move(v));
    }
    optim.close();
    manifest["optimizer"] = std::move(opt_entries);

    const TrainState& s = trainer->state();
    std::ostringstream rng;
    rng << s.rng;
    write_json(dir / "state.json", {{"step", s.step},
                                    {"epoch", s.epoch},
                                    {"batch_in_epoch", s.batch_in_epoch},
                                    {"rng", rng.str()},
                                    {"drop_draws", s.drop_draws},
                                    {"drops", s.drops}});
  }
  write_json(dir / "manifest.json", manifest);
  extras.vocab.save(dir / "vocab.tsv");
}

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("checkpoint directory not found: " + dir.string());
  CheckpointInfo info;
  info.manifest = read_json(dir / "manifest.json");
  if (info.manifest.value("format", "") != "harakat-checkpoint") {
    throw ConfigError(dir.string() + ": not a checkpoint manifest");
  }
  if (info.manifest.value("version", 0) != kFormatVersion) {
    throw ConfigError(dir.string() + ": unsupported checkpoint version");
  }
  info.model = model_config_from_json(get<json>(info.manifest, "model_config"));
  if (info.manifest.contains("train_config")) {
    info.train = train_config_from_json(info.manifest["train_config"]);
  }
  info.extras.features = feature_config_from_json(get<json>(info.manifest, "features"));
  try {
    info.extras.vocab = CharVocab::load(dir / "vocab.tsv");
  } catch (const std::exception& e) {
    throw ConfigError(std::string("checkpoint vocabulary: ") + e.what());
  }
  if (info.extras.vocab.size() != info.model.vocab_size) {
    throw ConfigError("checkpoint vocabulary has " + std::to_string(info.extras.vocab.size()) +
                      " entries but the model expects " + std::to_string(info.model.vocab_size));
  }
  if (info.extras.features.n_frames() != info.model.mel_frames ||
      info.extras.features.n_mels != info.model.mel_bins) {
    throw ConfigError("checkpoint feature config does not match the model's mel shape");
  }
  return info;
}

void load_weights(const fs::path& dir, FusionModel& model) {
  const json manifest = read_json(dir / "manifest.json");
  const auto blob = read_blob(dir / "weights.bin");
  const json tensors = get<json>(manifest, "tensors");
  std::unordered_map<std::string, const json*> by_name;
  for (const auto& e : tensors) by_name[get<std::string>(e, "name")] = &e;
  const auto params = model.parameters();
  if (by_name.size() != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(by_name.size()) + " tensors, model has " +
                      std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    auto it = by_name.find(p->name());
    if (it == by_name.end()) throw ConfigError("checkpoint lacks tensor " + p->name());
    read_entry(*it->second, blob, p->mutable_value(), p->name());
  }
}

std::unique_ptr<FusionModel> load_model(const fs::path& dir, CheckpointInfo* info) {
  CheckpointInfo local = read_checkpoint_info(dir);
  auto model = std::make_unique<FusionModel>(local.model);
  load_weights(dir, *model);
  if (info) *info = std::move(local);
  return model;
}

void load_trainer_state(const fs::path& dir, Trainer& trainer) {
  const json manifest = read_json(dir / "manifest.json");
  if (!manifest.contains("optimizer")) throw ConfigError(dir.string() + ": no optimizer state");
  const auto blob = read_blob(dir / "optim.bin");
  std::unordered_map<std::string, const json*> by_name;
  for (const auto& e : manifest["optimizer"]) by_name[get<std::string>(e, "name")] = &e;

  auto& opt = trainer.optimizer();
  for (std::size_t k = 0; k < opt.parameters().size(); ++k) {
    const std::string& name = opt.parameters()[k]->name();
    auto m = by_name.find(name + ".m");
    auto v = by_name.find(name + ".v");
    if (m == by_name.end() || v == by_name.end()) {
      throw ConfigError("checkpoint lacks optimizer moments for " + name);
    }
    read_entry(*m->second, blob, opt.slots()[k].m, name + ".m");
    read_entry(*v->second, blob, opt.slots()[k].v, name + ".v");
    opt.slots()[k].t = get<std::int64_t>(*m->second, "step");
  }

  const json state = read_json(dir / "state.json");
  TrainState& s = trainer.state();
  s.step = get<std::int64_t>(state, "step");
  s.epoch = get<int>(state, "epoch");
  s.batch_in_epoch = get<std::size_t>(state, "batch_in_epoch");
  s.drop_draws = get<std::int64_t>(state, "drop_draws");
  s.drops = get<std::int64_t>(state, "drops");
  std::istringstream rng(get<std::string>(state, "rng"));
  rng >> s.rng;
  if (!rng) throw ConfigError("checkpoint RNG state is corrupt");
  trainer.enter_epoch(std::min(s.epoch, trainer.config().total_epochs() - 1));
}

}  // namespace harakat
