#include "harakat/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "harakat/checkpoint.hpp"
#include "harakat/errors.hpp"

namespace harakat {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Removes a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (quote == 0 && (line[i] == '"' || line[i] == '\'')) quote = line[i];
    else if (line[i] == quote) quote = 0;
    else if (line[i] == '#' && quote == 0) return line.substr(0, i);
  }
  return line;
}

bool is_quote(char c) { return c == '"' || c == '\''; }

std::string unquote(const std::string& v, const std::string& where) {
  if (v.size() >= 2 && is_quote(v.front()) && v.back() == v.front()) return v.substr(1, v.size() - 2);
  if (!v.empty() && (is_quote(v.front()) || is_quote(v.back()))) {
    throw ConfigError(where + ": unbalanced quotes");
  }
  return v;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key + ": \"" + v + "\" is not a valid number");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw ConfigError(key + ": \"" + v + "\" is not a valid number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got \"" + v + "\"");
}

fs::path resolve(const std::string& v, const fs::path& base) {
  fs::path p = v;
  if (p.is_relative() && !base.empty()) p = (base / p).lexically_normal();
  return p;
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string where = origin + " line " + std::to_string(line_no);
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    const std::string value = unquote(trim(std::string_view(line).substr(eq + 1)), where);
    if (!out.emplace(full, value).second) throw ConfigError(where + ": duplicate key " + full);
  }
  return out;
}

std::map<std::string, std::string> parse_kv_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_kv_text(ss.str(), path.string());
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = {
      "model.preset",          "model.fusion",          "model.d_text",
      "model.text_layers",     "model.n_heads_text",    "model.d_speech",
      "model.speech_layers",   "model.n_heads_speech",  "model.fusion_heads",
      "model.pool_factor",     "model.max_text_len",    "model.dropout",
      "model.init_seed",       "train.batch_size",      "train.lr",
      "train.beta1",           "train.beta2",           "train.eps",
      "train.weight_decay",    "train.epochs_phase1",   "train.epochs_phase2",
      "train.speech_drop_prob", "train.drop_granularity", "train.augment",
      "train.seed",            "train.max_steps",       "train.keep_epoch_checkpoints",
      "features.fixed_seconds", "paths.train_manifest", "paths.dev_manifest",
      "paths.output_dir",
  };
  return keys;
}

void RunConfig::apply_preset(const std::string& name) {
  const int vocab = model.vocab_size;
  const FusionMode fusion = model.fusion;
  if (name == "toy") {
    model = ModelConfig::toy(vocab);
    features.fixed_seconds = 2.0;
  } else if (name == "full") {
    model = ModelConfig::full_scale(vocab);
    features.fixed_seconds = 30.0;
  } else {
    throw ConfigError("model.preset must be \"toy\" or \"full\", got \"" + name + "\"");
  }
  model.fusion = fusion;
  preset = name;
}

void RunConfig::set(const std::string& key, const std::string& v, const fs::path& base) {
  auto i = [&](int& out) { out = parse_number<int>(key, v); };
  auto r = [&](double& out) { out = parse_real(key, v); };

  if (key == "model.preset") apply_preset(v);
  else if (key == "model.fusion") model.fusion = parse_fusion_mode(v);
  else if (key == "model.d_text") i(model.d_text);
  else if (key == "model.text_layers") i(model.text_layers);
  else if (key == "model.n_heads_text") i(model.n_heads_text);
  else if (key == "model.d_speech") i(model.d_speech);
  else if (key == "model.speech_layers") i(model.speech_layers);
  else if (key == "model.n_heads_speech") i(model.n_heads_speech);
  else if (key == "model.fusion_heads") i(model.fusion_heads);
  else if (key == "model.pool_factor") i(model.pool_factor);
  else if (key == "model.max_text_len") i(model.max_text_len);
  else if (key == "model.dropout") r(model.dropout);
  else if (key == "model.init_seed") model.init_seed = parse_number<std::uint64_t>(key, v);
  else if (key == "train.batch_size") train.batch_size = parse_number<std::size_t>(key, v);
  else if (key == "train.lr") r(train.optimizer.lr);
  else if (key == "train.beta1") r(train.optimizer.beta1);
  else if (key == "train.beta2") r(train.optimizer.beta2);
  else if (key == "train.eps") r(train.optimizer.eps);
  else if (key == "train.weight_decay") r(train.optimizer.weight_decay);
  else if (key == "train.epochs_phase1") i(train.epochs_phase1);
  else if (key == "train.epochs_phase2") i(train.epochs_phase2);
  else if (key == "train.speech_drop_prob") r(train.speech_drop_prob);
  else if (key == "train.drop_granularity") train.drop_granularity = parse_drop_granularity(v);
  else if (key == "train.augment") train.augment = parse_bool(key, v);
  else if (key == "train.seed") {
    train.seed = parse_number<std::uint64_t>(key, v);
    seed_set = true;
  }
  else if (key == "train.max_steps") train.max_steps = parse_number<std::int64_t>(key, v);
  else if (key == "train.keep_epoch_checkpoints") train.keep_epoch_checkpoints = parse_bool(key, v);
  else if (key == "features.fixed_seconds") r(features.fixed_seconds);
  else if (key == "paths.train_manifest") train_manifest = resolve(v, base);
  else if (key == "paths.dev_manifest") dev_manifest = resolve(v, base);
  else if (key == "paths.output_dir") output_dir = resolve(v, base);
  else throw ConfigError("unknown config key \"" + key + "\"");
}

RunConfig RunConfig::load(const std::optional<fs::path>& path, const std::vector<std::string>& overrides) {
  RunConfig rc;
  if (path) {
    const auto kv = parse_kv_file(*path);
    const fs::path base = path->parent_path();
    if (auto it = kv.find("model.preset"); it != kv.end()) rc.set(it->first, it->second, base);
    for (const auto& [k, v] : kv) {
      if (k != "model.preset") rc.set(k, v, base);
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override \"" + o + "\" is not key=value");
    rc.set(trim(std::string_view(o).substr(0, eq)), trim(std::string_view(o).substr(eq + 1)));
  }
  return rc;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("CW_SEED");
  if (!s || !*s) return std::nullopt;
  return parse_number<std::uint64_t>("CW_SEED", s);
}

void RunConfig::finalize() {
  if (!seed_set) {
    if (auto s = env_seed()) {
      train.seed = *s;
      seed_set = true;
    }
  }
  if (!(features.fixed_seconds > 0.0)) throw ConfigError("features.fixed_seconds must be positive");
  model.mel_bins = features.n_mels;
  model.mel_frames = features.n_frames();
  if (model.vocab_size < 2) model.vocab_size = 2;
  model.validate();
  train.validate();
  if (train_manifest.empty()) throw ConfigError("paths.train_manifest is required");
  if (!fs::exists(train_manifest)) throw DataError("train manifest not found: " + train_manifest.string());
  if (dev_manifest && !fs::exists(*dev_manifest)) {
    throw DataError("dev manifest not found: " + dev_manifest->string());
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = {{"preset", preset},
                      {"model", harakat::to_json(model)},
                      {"train", harakat::to_json(train)},
                      {"features", harakat::to_json(features)},
                      {"train_manifest", train_manifest.string()},
                      {"output_dir", output_dir.string()}};
  if (dev_manifest) j["dev_manifest"] = dev_manifest->string();
  return j;
}

}  // namespace harakat
